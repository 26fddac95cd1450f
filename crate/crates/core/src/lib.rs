//! Static Android malware detection: APK/AXML/DEX parsing, a binary feature
//! space, and an autoencoder trained on malware only.

pub mod apk;
pub mod detector;
pub mod dex;
pub mod extract;
pub mod features;
pub mod manifest;
pub mod nn;
pub mod run;
pub mod time;

pub use apk::{open_archive, verify_certificate, ApkArchive, ArchiveError, CertificateStatus, CertificateVerdict};
pub use detector::{
    calibrate_threshold, classify, evaluate, generate_synthetic_dataset, run_split_sweep, split, CalibrationMethod, DetectorError,
    DetectorModel, EvalReport, LabeledDataset, PipelineConfig, RoutingMode,
};
pub use dex::{default_catalog, scan_app_dex, scan_dex, ApiCatalog, ApiHits, DexError};
pub use extract::extract_report;
pub use features::{default_vocabulary, ApkReport, FeatureError, FeatureVector, FeatureVocabulary, Fingerprint, Label};
pub use manifest::{decode_axml, parse_plaintext_manifest, ManifestError, ManifestFacts};
pub use nn::{build_default_network, build_network, Activation, LayerSpec, Network, NnError, TrainConfig};
pub use run::RunManifest;
pub use time::Timestamp;
