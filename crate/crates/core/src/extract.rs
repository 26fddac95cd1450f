//! Runs every sub-extractor over one archive and collects an [`ApkReport`].

use crate::apk::{scan_assets, verify_certificate, ApkArchive};
use crate::dex::scan_app_dex;
use crate::features::{ApkReport, FeatureVocabulary};
use crate::manifest::{decode_manifest, ManifestFacts};
use crate::time::Timestamp;

pub const MANIFEST_PATH: &str = "AndroidManifest.xml";

/// Never fails: sub-extractor problems are recorded in `diagnostics` and the
/// affected facts are left empty.
pub fn extract_report(archive: &ApkArchive, vocab: &FeatureVocabulary, reference_time: Timestamp) -> ApkReport {
    let mut report = ApkReport::empty(archive.source_id());
    report.catalog_fingerprint = Some(vocab.catalog_fingerprint());

    report.manifest = match archive.read_entry(MANIFEST_PATH) {
        Ok(bytes) => decode_manifest(&bytes).unwrap_or_else(|e| {
            report.diagnostics.push(format!("manifest: {e}"));
            ManifestFacts::default()
        }),
        Err(e) => {
            report.diagnostics.push(format!("manifest: {e}"));
            ManifestFacts::default()
        }
    };

    let dex = scan_app_dex(archive, vocab.catalog());
    report.api = dex.hits;
    report.diagnostics.extend(dex.diagnostics.into_iter().map(|d| format!("dex: {d}")));
    for (path, e) in dex.failures {
        report.diagnostics.push(format!("dex: {path}: {e}"));
    }

    report.certificate = verify_certificate(archive, reference_time);
    if let Some(detail) = &report.certificate.detail {
        report
            .diagnostics
            .push(format!("certificate {}: {detail}", report.certificate.status.name()));
    }
    if archive.has_v2_signing_block() {
        report
            .diagnostics
            .push("certificate: APK signing block present (v2/v3 not verified)".to_string());
    }

    let assets = scan_assets(archive);
    report.embedded_apk = assets.embedded_apk;
    for nested in &assets.nested {
        report.diagnostics.push(format!("assets: nested apk {nested}"));
    }
    if assets.unreadable > 0 {
        report
            .diagnostics
            .push(format!("assets: {} unreadable entries skipped", assets.unreadable));
    }
    report
}
