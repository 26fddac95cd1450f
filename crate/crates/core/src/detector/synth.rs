//! Seeded stand-in datasets drawn from two bit profiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorError, LabeledDataset};
use crate::features::{default_vocabulary, FeatureVector, FeatureVocabulary, Label};

/// Per-feature probabilities, in vocabulary order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfiles {
    pub malicious: Vec<f64>,
    pub benign: Vec<f64>,
}

impl SyntheticProfiles {
    /// `round(p)` per feature: each record is this template with flip noise.
    pub fn template(probabilities: &[f64]) -> Vec<bool> {
        probabilities.iter().map(|&p| p >= 0.5).collect()
    }
}

const DEFAULT_PROFILE: &[(&str, f64, f64)] = &[
    ("perm.SEND_SMS", 0.85, 0.03),
    ("perm.RECEIVE_SMS", 0.80, 0.05),
    ("perm.READ_SMS", 0.80, 0.05),
    ("perm.WRITE_SMS", 0.60, 0.02),
    ("perm.RECEIVE_MMS", 0.40, 0.02),
    ("perm.READ_PHONE_STATE", 0.90, 0.30),
    ("perm.CALL_PHONE", 0.55, 0.10),
    ("perm.READ_CALL_LOG", 0.45, 0.05),
    ("perm.PROCESS_OUTGOING_CALLS", 0.55, 0.02),
    ("perm.READ_CONTACTS", 0.60, 0.20),
    ("perm.WRITE_CONTACTS", 0.35, 0.08),
    ("perm.ACCESS_FINE_LOCATION", 0.45, 0.35),
    ("perm.ACCESS_COARSE_LOCATION", 0.55, 0.40),
    ("perm.RECORD_AUDIO", 0.30, 0.15),
    ("perm.CAMERA", 0.25, 0.30),
    ("perm.INTERNET", 0.98, 0.90),
    ("perm.ACCESS_NETWORK_STATE", 0.90, 0.75),
    ("perm.ACCESS_WIFI_STATE", 0.70, 0.40),
    ("perm.RECEIVE_BOOT_COMPLETED", 0.85, 0.20),
    ("perm.INSTALL_PACKAGES", 0.60, 0.01),
    ("perm.SYSTEM_ALERT_WINDOW", 0.55, 0.10),
    ("perm.WRITE_EXTERNAL_STORAGE", 0.80, 0.60),
    ("intent.MAIN", 0.95, 0.98),
    ("intent.LAUNCHER", 0.90, 0.98),
    ("intent.BOOT_COMPLETED", 0.80, 0.15),
    ("intent.SMS_RECEIVED", 0.70, 0.03),
    ("intent.PACKAGE_ADDED", 0.55, 0.05),
    ("intent.USER_PRESENT", 0.60, 0.05),
    ("intent.DEVICE_ADMIN_ENABLED", 0.40, 0.01),
    ("intent.CONNECTIVITY_CHANGE", 0.65, 0.20),
    ("api.telephony", 0.90, 0.30),
    ("api.network-sockets", 0.70, 0.20),
    ("api.network-http", 0.90, 0.80),
    ("api.dynamic-loading", 0.75, 0.10),
    ("api.reflection", 0.85, 0.60),
    ("api.system-service", 0.95, 0.90),
    ("api.runtime-exec", 0.70, 0.10),
    ("api.crypto", 0.80, 0.55),
    ("cert.invalid", 0.70, 0.05),
    ("assets.embedded-apk", 0.55, 0.01),
];

/// Malware-heavy probabilities on SMS/telephony permissions, boot receivers,
/// dynamic loading, exec, fs4 and fs5; benign apps share only the common
/// INTERNET/launcher/HTTP/system-service traits.
pub fn default_profiles(vocab: &FeatureVocabulary) -> SyntheticProfiles {
    let lookup = |id: &str| DEFAULT_PROFILE.iter().find(|(f, _, _)| *f == id);
    let (malicious, benign) = vocab
        .features()
        .iter()
        .map(|f| lookup(&f.id).map_or((0.1, 0.1), |&(_, m, b)| (m, b)))
        .unzip();
    SyntheticProfiles { malicious, benign }
}

pub fn generate_synthetic_dataset(n_benign: usize, n_malicious: usize, profile_seed: u64, noise: f64) -> Result<LabeledDataset, DetectorError> {
    let vocab = default_vocabulary();
    generate_with_profiles(&vocab, &default_profiles(&vocab), n_benign, n_malicious, profile_seed, noise)
}

/// Each bit is the profile template XOR Bernoulli(`noise`). Malicious records
/// come first.
pub fn generate_with_profiles(
    vocab: &FeatureVocabulary,
    profiles: &SyntheticProfiles,
    n_benign: usize,
    n_malicious: usize,
    profile_seed: u64,
    noise: f64,
) -> Result<LabeledDataset, DetectorError> {
    if !(0.0..0.5).contains(&noise) {
        return Err(DetectorError::InvalidNoise(noise));
    }
    if n_benign == 0 {
        return Err(DetectorError::EmptyClass(Label::Benign));
    }
    if n_malicious == 0 {
        return Err(DetectorError::EmptyClass(Label::Malicious));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile_seed);
    let mut records = Vec::with_capacity(n_benign + n_malicious);
    for (label, n, probs, tag) in [
        (Label::Malicious, n_malicious, &profiles.malicious, "mal"),
        (Label::Benign, n_benign, &profiles.benign, "ben"),
    ] {
        let template = SyntheticProfiles::template(probs);
        for i in 0..n {
            let bits = template.iter().map(|&t| t ^ rng.gen_bool(noise)).collect();
            records.push((
                FeatureVector {
                    app_id: format!("synthetic-{tag}-{i:05}"),
                    bits,
                    fingerprint: vocab.fingerprint(),
                },
                label,
            ));
        }
    }
    LabeledDataset::new(vocab.fingerprint(), records)
}
