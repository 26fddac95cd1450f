//! The joint binary feature space: an ordered vocabulary partitioned into
//! five feature sets, and the mapping from an [`ApkReport`] to a bit vector.
//!
//! | set | source                     | matcher semantics                        |
//! |-----|----------------------------|------------------------------------------|
//! | fs1 | `<uses-permission>`        | permission name equality                 |
//! | fs2 | intent-filter children     | action or category name equality         |
//! | fs3 | DEX method references      | API category is among the hit categories |
//! | fs4 | v1 signature verdict       | status is in the listed set              |
//! | fs5 | `assets/` scan             | a nested APK was found                   |

mod vectors;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apk::{CertificateStatus, CertificateVerdict};
use crate::dex::{default_catalog, ApiCatalog, ApiCategory, ApiHits, ApiMatcher};
use crate::manifest::ManifestFacts;

pub use vectors::{read_vectors, write_vectors, Label, VectorFile, VectorRecord};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("duplicate feature id {0:?}")]
    DuplicateId(String),
    #[error("feature set {0} has no members")]
    EmptySet(FeatureSet),
    #[error("feature {id:?}: {reason}")]
    BadMatcher { id: String, reason: String },
    #[error("vocabulary mismatch: expected fingerprint {expected}, found {found}")]
    VocabularyMismatch { expected: Fingerprint, found: Fingerprint },
    #[error("invalid vocabulary file: {0}")]
    Parse(String),
    #[error("invalid vector file: {0}")]
    VectorFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// CRC-32 of a canonical serialization; printed as 8 hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub u32);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08x}", self.0)
    }
}

impl std::str::FromStr for Fingerprint {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u32::from_str_radix(s, 16).map(Fingerprint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Fs1,
    Fs2,
    Fs3,
    Fs4,
    Fs5,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 5] = [Self::Fs1, Self::Fs2, Self::Fs3, Self::Fs4, Self::Fs5];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fs1 => "fs1",
            Self::Fs2 => "fs2",
            Self::Fs3 => "fs3",
            Self::Fs4 => "fs4",
            Self::Fs5 => "fs5",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub id: String,
    pub set: FeatureSet,
    pub matcher: String,
}

impl Feature {
    pub fn new(id: &str, set: FeatureSet, matcher: &str) -> Self {
        Self {
            id: id.to_string(),
            set,
            matcher: matcher.to_string(),
        }
    }
}

/// fs4 matcher alias for every non-valid status.
pub const ANY_INVALID: &str = "any-invalid";
/// Joins permissions in an fs1 matcher that requires all of them,
/// e.g. `android.permission.SEND_SMS & android.permission.INTERNET`.
pub const PERMISSION_CONJUNCTION: char = '&';
/// The only fs5 matcher.
pub const EMBEDDED_APK: &str = "embedded-apk";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Predicate {
    /// Every listed permission is requested; more than one is a pair feature.
    Permission(Vec<String>),
    Intent(String),
    Api(String),
    Certificate(BTreeSet<CertificateStatus>),
    EmbeddedApk,
}

impl Predicate {
    fn compile(feature: &Feature, catalog: &ApiCatalog) -> Result<Self, FeatureError> {
        let bad = |reason: String| FeatureError::BadMatcher {
            id: feature.id.clone(),
            reason,
        };
        let m = feature.matcher.trim();
        if m.is_empty() {
            return Err(bad("empty matcher".into()));
        }
        Ok(match feature.set {
            FeatureSet::Fs1 => {
                let names: Vec<String> = m.split(PERMISSION_CONJUNCTION).map(|p| p.trim().to_string()).collect();
                if names.iter().any(String::is_empty) {
                    return Err(bad(format!("empty permission in {m:?}")));
                }
                Self::Permission(names)
            }
            FeatureSet::Fs2 => Self::Intent(m.to_string()),
            FeatureSet::Fs3 => {
                if catalog.category(m).is_none() {
                    return Err(bad(format!("unknown API category {m:?}")));
                }
                Self::Api(m.to_string())
            }
            FeatureSet::Fs4 if m == ANY_INVALID => Self::Certificate(
                CertificateStatus::ALL
                    .into_iter()
                    .filter(|s| *s != CertificateStatus::Valid)
                    .collect(),
            ),
            FeatureSet::Fs4 => Self::Certificate(
                m.split(',')
                    .map(|s| {
                        CertificateStatus::parse(s.trim())
                            .ok_or_else(|| bad(format!("unknown certificate status {s:?}")))
                    })
                    .collect::<Result<_, _>>()?,
            ),
            FeatureSet::Fs5 if m == EMBEDDED_APK => Self::EmbeddedApk,
            FeatureSet::Fs5 => return Err(bad(format!("fs5 matcher must be {EMBEDDED_APK:?}"))),
        })
    }

    fn holds(&self, report: &ApkReport) -> bool {
        match self {
            Self::Permission(names) => names.iter().all(|p| report.manifest.permissions.contains(p)),
            Self::Intent(i) => {
                report.manifest.intent_actions.contains(i) || report.manifest.intent_categories.contains(i)
            }
            Self::Api(c) => report.api.contains(c),
            Self::Certificate(statuses) => statuses.contains(&report.certificate.status),
            Self::EmbeddedApk => report.embedded_apk,
        }
    }
}

/// Everything extracted from one APK, before vectorization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApkReport {
    pub app_id: String,
    pub manifest: ManifestFacts,
    pub api: ApiHits,
    pub certificate: CertificateVerdict,
    pub embedded_apk: bool,
    pub diagnostics: Vec<String>,
    /// Catalog the API hits were computed with, when known.
    #[serde(default)]
    pub catalog_fingerprint: Option<Fingerprint>,
}

impl ApkReport {
    /// A report with no features present and a valid certificate.
    pub fn empty(app_id: &str) -> Self {
        Self {
            app_id: app_id.to_string(),
            manifest: ManifestFacts::default(),
            api: ApiHits::default(),
            certificate: CertificateVerdict::assumed_valid(),
            embedded_apk: false,
            diagnostics: Vec::new(),
            catalog_fingerprint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub app_id: String,
    pub bits: Vec<bool>,
    pub fingerprint: Fingerprint,
}

impl FeatureVector {
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    version: u32,
    #[serde(rename = "feature")]
    features: Vec<Feature>,
    #[serde(rename = "category", default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<ApiCategory>>,
}

/// Ordered feature universe. The order is the vector index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVocabulary {
    features: Vec<Feature>,
    predicates: Vec<Predicate>,
    catalog: ApiCatalog,
    fingerprint: Fingerprint,
    catalog_fingerprint: Fingerprint,
}

fn catalog_canonical(catalog: &ApiCatalog) -> String {
    let mut out = String::new();
    for c in catalog.categories() {
        for m in &c.matchers {
            out.push_str(&format!(
                "category\t{}\t{}\t{}\n",
                c.name,
                m.class_prefix,
                m.method.as_deref().unwrap_or("")
            ));
        }
    }
    out
}

impl FeatureVocabulary {
    pub fn new(features: Vec<Feature>, catalog: ApiCatalog) -> Result<Self, FeatureError> {
        let mut ids = BTreeSet::new();
        for f in &features {
            if f.id.trim().is_empty() {
                return Err(FeatureError::BadMatcher {
                    id: f.id.clone(),
                    reason: "empty id".into(),
                });
            }
            if !ids.insert(f.id.as_str()) {
                return Err(FeatureError::DuplicateId(f.id.clone()));
            }
        }
        for set in FeatureSet::ALL {
            if !features.iter().any(|f| f.set == set) {
                return Err(FeatureError::EmptySet(set));
            }
        }
        let predicates = features
            .iter()
            .map(|f| Predicate::compile(f, &catalog))
            .collect::<Result<_, _>>()?;
        let catalog_text = catalog_canonical(&catalog);
        let mut canonical = String::new();
        for f in &features {
            canonical.push_str(&format!("feature\t{}\t{}\t{}\n", f.id, f.set, f.matcher));
        }
        canonical.push_str(&catalog_text);
        Ok(Self {
            features,
            predicates,
            catalog,
            fingerprint: Fingerprint(crc32fast::hash(canonical.as_bytes())),
            catalog_fingerprint: Fingerprint(crc32fast::hash(catalog_text.as_bytes())),
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn dimension(&self) -> usize {
        self.features.len()
    }

    pub fn catalog(&self) -> &ApiCatalog {
        &self.catalog
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn catalog_fingerprint(&self) -> Fingerprint {
        self.catalog_fingerprint
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.features.iter().position(|f| f.id == id)
    }

    pub fn count(&self, set: FeatureSet) -> usize {
        self.features.iter().filter(|f| f.set == set).count()
    }

    pub fn from_toml(text: &str) -> Result<Self, FeatureError> {
        let file: VocabularyFile = toml::from_str(text).map_err(|e| FeatureError::Parse(e.to_string()))?;
        if file.version != 1 {
            return Err(FeatureError::Parse(format!("unsupported version {}", file.version)));
        }
        let catalog = match file.categories {
            Some(c) => ApiCatalog::new(c).map_err(|e| FeatureError::Parse(e.to_string()))?,
            None => default_catalog(),
        };
        Self::new(file.features, catalog)
    }

    pub fn to_toml(&self) -> String {
        let file = VocabularyFile {
            version: 1,
            features: self.features.clone(),
            categories: Some(self.catalog.categories().to_vec()),
        };
        toml::to_string(&file).expect("vocabulary serializes")
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Evaluates every feature's indicator on `report`.
    pub fn vectorize(&self, report: &ApkReport) -> Result<FeatureVector, FeatureError> {
        if let Some(found) = report.catalog_fingerprint {
            if found != self.catalog_fingerprint {
                return Err(FeatureError::VocabularyMismatch {
                    expected: self.catalog_fingerprint,
                    found,
                });
            }
        }
        Ok(FeatureVector {
            app_id: report.app_id.clone(),
            bits: self.predicates.iter().map(|p| p.holds(report)).collect(),
            fingerprint: self.fingerprint,
        })
    }

    /// Builds a report that satisfies exactly the features set in `bits`.
    /// With pair features this holds only for consistent vectors, where
    /// each pair bit equals the conjunction of its members' bits.
    ///
    /// Panics if `bits` does not have the vocabulary's dimension.
    pub fn synthesize_report(&self, app_id: &str, bits: &[bool]) -> ApkReport {
        assert_eq!(bits.len(), self.dimension(), "bit vector dimension");
        let mut report = ApkReport::empty(app_id);
        for (p, &b) in self.predicates.iter().zip(bits) {
            if !b {
                continue;
            }
            match p {
                Predicate::Permission(names) => {
                    report.manifest.permissions.extend(names.iter().cloned());
                }
                Predicate::Intent(name) => {
                    report.manifest.intent_actions.insert(name.clone());
                }
                Predicate::Api(category) => {
                    report.api.record(category, "Lsynthetic/Evidence;", "call");
                }
                Predicate::Certificate(_) => {}
                Predicate::EmbeddedApk => report.embedded_apk = true,
            }
        }
        // first status consistent with every fs4 bit
        let fs4: Vec<(&BTreeSet<CertificateStatus>, bool)> = self
            .predicates
            .iter()
            .zip(bits)
            .filter_map(|(p, &b)| match p {
                Predicate::Certificate(s) => Some((s, b)),
                _ => None,
            })
            .collect();
        if let Some(status) = CertificateStatus::ALL
            .into_iter()
            .find(|s| fs4.iter().all(|(set, b)| set.contains(s) == *b))
        {
            report.certificate.status = status;
        }
        report
    }
}

const DEFAULT_PERMISSIONS: [&str; 22] = [
    "SEND_SMS",
    "RECEIVE_SMS",
    "READ_SMS",
    "WRITE_SMS",
    "RECEIVE_MMS",
    "READ_PHONE_STATE",
    "CALL_PHONE",
    "READ_CALL_LOG",
    "PROCESS_OUTGOING_CALLS",
    "READ_CONTACTS",
    "WRITE_CONTACTS",
    "ACCESS_FINE_LOCATION",
    "ACCESS_COARSE_LOCATION",
    "RECORD_AUDIO",
    "CAMERA",
    "INTERNET",
    "ACCESS_NETWORK_STATE",
    "ACCESS_WIFI_STATE",
    "RECEIVE_BOOT_COMPLETED",
    "INSTALL_PACKAGES",
    "SYSTEM_ALERT_WINDOW",
    "WRITE_EXTERNAL_STORAGE",
];

const DEFAULT_INTENTS: [&str; 8] = [
    "android.intent.action.MAIN",
    "android.intent.category.LAUNCHER",
    "android.intent.action.BOOT_COMPLETED",
    "android.provider.Telephony.SMS_RECEIVED",
    "android.intent.action.PACKAGE_ADDED",
    "android.intent.action.USER_PRESENT",
    "android.app.action.DEVICE_ADMIN_ENABLED",
    "android.net.conn.CONNECTIVITY_CHANGE",
];

/// The seven default API categories with `network-sockets` split into raw
/// sockets and HTTP clients, giving eight fs3 features.
pub fn default_vocabulary_catalog() -> ApiCatalog {
    let mut categories: Vec<ApiCategory> = Vec::new();
    for c in default_catalog().categories() {
        if c.name == "network-sockets" {
            categories.push(ApiCategory {
                name: "network-sockets".into(),
                matchers: vec![
                    ApiMatcher::prefix("Ljava/net/Socket;"),
                    ApiMatcher::prefix("Ljava/net/ServerSocket;"),
                    ApiMatcher::prefix("Ljava/net/DatagramSocket;"),
                    ApiMatcher::prefix("Ljava/net/InetSocketAddress;"),
                    ApiMatcher::prefix("Ljavax/net/"),
                ],
            });
            categories.push(ApiCategory {
                name: "network-http".into(),
                matchers: vec![
                    ApiMatcher::prefix("Lorg/apache/http/"),
                    ApiMatcher::prefix("Ljava/net/HttpURLConnection;"),
                    ApiMatcher::prefix("Ljava/net/URL;"),
                    ApiMatcher::prefix("Ljava/net/URLConnection;"),
                    ApiMatcher::prefix("Ljavax/net/ssl/HttpsURLConnection;"),
                ],
            });
        } else {
            categories.push(c.clone());
        }
    }
    ApiCatalog::new(categories).expect("default vocabulary catalog is well formed")
}

/// 40 features: 22 permissions, 8 intent strings, 8 API categories, the
/// invalid-certificate bit, and the embedded-APK bit.
pub fn default_vocabulary() -> FeatureVocabulary {
    let catalog = default_vocabulary_catalog();
    let mut features = Vec::with_capacity(40);
    for p in DEFAULT_PERMISSIONS {
        features.push(Feature::new(
            &format!("perm.{p}"),
            FeatureSet::Fs1,
            &format!("android.permission.{p}"),
        ));
    }
    for i in DEFAULT_INTENTS {
        let short = i.rsplit('.').next().unwrap_or(i);
        features.push(Feature::new(&format!("intent.{short}"), FeatureSet::Fs2, i));
    }
    for c in catalog.categories() {
        features.push(Feature::new(&format!("api.{}", c.name), FeatureSet::Fs3, &c.name));
    }
    features.push(Feature::new("cert.invalid", FeatureSet::Fs4, ANY_INVALID));
    features.push(Feature::new("assets.embedded-apk", FeatureSet::Fs5, EMBEDDED_APK));
    FeatureVocabulary::new(features, catalog).expect("default vocabulary is well formed")
}

/// |S| as the sum of per-set counts.
pub fn union_dimension(vocab: &FeatureVocabulary) -> usize {
    FeatureSet::ALL.iter().map(|&s| vocab.count(s)).sum()
}
