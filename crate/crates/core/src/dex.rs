//! DEX id-table scanning for sensitive API references.
//!
//! Only `string_ids`, `type_ids`, `proto_ids` and `method_ids` are read. A
//! method counts as referenced when it appears in `method_ids`; call-site
//! reachability is not analysed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apk::ApkArchive;

pub const DEX_MAGIC: &[u8; 4] = b"dex\n";
pub const SUPPORTED_VERSIONS: [&[u8; 3]; 4] = [b"035", b"037", b"038", b"039"];
const HEADER_LEN: usize = 0x70;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DexError {
    #[error("not a DEX file")]
    NotDex,
    #[error("truncated {0} table")]
    TruncatedTable(&'static str),
    #[error("{table} index {index} out of range")]
    IndexOutOfRange { table: &'static str, index: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiMatcher {
    /// Type-descriptor prefix, e.g. `Landroid/telephony/`.
    pub class_prefix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

impl ApiMatcher {
    pub fn prefix(class_prefix: &str) -> Self {
        Self {
            class_prefix: class_prefix.to_string(),
            method: None,
        }
    }

    pub fn method(class_prefix: &str, method: &str) -> Self {
        Self {
            class_prefix: class_prefix.to_string(),
            method: Some(method.to_string()),
        }
    }

    pub fn matches(&self, class: &str, method: &str) -> bool {
        class.starts_with(&self.class_prefix) && self.method.as_deref().is_none_or(|m| m == method)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCategory {
    pub name: String,
    #[serde(rename = "matcher")]
    pub matchers: Vec<ApiMatcher>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("duplicate API category {0:?}")]
    DuplicateCategory(String),
    #[error("matcher prefix {0:?} is not a type descriptor")]
    BadPrefix(String),
}

/// Named groups of sensitive API matchers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ApiCategory>", into = "Vec<ApiCategory>")]
pub struct ApiCatalog {
    categories: Vec<ApiCategory>,
}

impl TryFrom<Vec<ApiCategory>> for ApiCatalog {
    type Error = CatalogError;

    fn try_from(categories: Vec<ApiCategory>) -> Result<Self, Self::Error> {
        ApiCatalog::new(categories)
    }
}

impl From<ApiCatalog> for Vec<ApiCategory> {
    fn from(c: ApiCatalog) -> Self {
        c.categories
    }
}

impl ApiCatalog {
    pub fn new(categories: Vec<ApiCategory>) -> Result<Self, CatalogError> {
        let mut names = BTreeSet::new();
        for c in &categories {
            if !names.insert(c.name.as_str()) {
                return Err(CatalogError::DuplicateCategory(c.name.clone()));
            }
            if let Some(m) = c.matchers.iter().find(|m| !m.class_prefix.starts_with('L')) {
                return Err(CatalogError::BadPrefix(m.class_prefix.clone()));
            }
        }
        Ok(Self { categories })
    }

    pub fn categories(&self) -> &[ApiCategory] {
        &self.categories
    }

    pub fn category(&self, name: &str) -> Option<&ApiCategory> {
        self.categories.iter().find(|c| c.name == name)
    }

    /// Names of every category with a matcher accepting `class->method`.
    pub fn classify<'a>(&'a self, class: &'a str, method: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.categories
            .iter()
            .filter(move |c| c.matchers.iter().any(|m| m.matches(class, method)))
            .map(|c| c.name.as_str())
    }
}

/// The seven sensitive API groups: telephony, HTTP/sockets, dynamic code
/// loading, reflection, system services, runtime exec, and crypto.
pub fn default_catalog() -> ApiCatalog {
    let cat = |name: &str, matchers: Vec<ApiMatcher>| ApiCategory {
        name: name.to_string(),
        matchers,
    };
    ApiCatalog::new(vec![
        cat(
            "telephony",
            vec![
                ApiMatcher::prefix("Landroid/telephony/"),
            ],
        ),
        cat(
            "network-sockets",
            vec![
                ApiMatcher::prefix("Ljava/net/"),
                ApiMatcher::prefix("Ljavax/net/"),
                ApiMatcher::prefix("Lorg/apache/http/"),
            ],
        ),
        cat(
            "dynamic-loading",
            vec![
                ApiMatcher::prefix("Ldalvik/system/DexClassLoader;"),
                ApiMatcher::prefix("Ldalvik/system/PathClassLoader;"),
                ApiMatcher::prefix("Ldalvik/system/InMemoryDexClassLoader;"),
            ],
        ),
        cat(
            "reflection",
            vec![
                ApiMatcher::prefix("Ljava/lang/reflect/"),
                ApiMatcher::method("Ljava/lang/Class;", "forName"),
                ApiMatcher::method("Ljava/lang/Class;", "getMethod"),
                ApiMatcher::method("Ljava/lang/Class;", "getDeclaredMethod"),
            ],
        ),
        // Any class: the name alone identifies service lookups.
        cat("system-service", vec![ApiMatcher::method("L", "getSystemService")]),
        cat(
            "runtime-exec",
            vec![
                ApiMatcher::method("Ljava/lang/Runtime;", "exec"),
                ApiMatcher::prefix("Ljava/lang/ProcessBuilder;"),
                ApiMatcher::method("Ljava/lang/System;", "load"),
                ApiMatcher::method("Ljava/lang/System;", "loadLibrary"),
            ],
        ),
        cat(
            "crypto",
            vec![
                ApiMatcher::prefix("Ljavax/crypto/"),
                ApiMatcher::prefix("Ljava/security/MessageDigest;"),
            ],
        ),
    ])
    .expect("default catalog is well formed")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiHits {
    /// category → referenced (class descriptor, method name) pairs
    pub evidence: BTreeMap<String, BTreeSet<(String, String)>>,
}

impl ApiHits {
    pub fn hit_categories(&self) -> impl Iterator<Item = &str> {
        self.evidence.keys().map(String::as_str)
    }

    pub fn contains(&self, category: &str) -> bool {
        self.evidence.contains_key(category)
    }

    pub fn is_empty(&self) -> bool {
        self.evidence.is_empty()
    }

    pub fn record(&mut self, category: &str, class: &str, method: &str) {
        self.evidence
            .entry(category.to_string())
            .or_default()
            .insert((class.to_string(), method.to_string()));
    }

    pub fn merge(&mut self, other: ApiHits) {
        for (category, pairs) in other.evidence {
            self.evidence.entry(category).or_default().extend(pairs);
        }
    }
}

struct Dex<'a> {
    data: &'a [u8],
    string_ids: (usize, usize),
    type_ids: (usize, usize),
    proto_count: usize,
}

fn u32_at(data: &[u8], at: usize) -> Option<u32> {
    data.get(at..at.checked_add(4)?)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn table(data: &[u8], size_at: usize, name: &'static str, item: usize) -> Result<(usize, usize), DexError> {
    let size = u32_at(data, size_at).ok_or(DexError::TruncatedTable(name))? as usize;
    let off = u32_at(data, size_at + 4).ok_or(DexError::TruncatedTable(name))? as usize;
    if size == 0 {
        return Ok((0, 0));
    }
    let end = size
        .checked_mul(item)
        .and_then(|n| n.checked_add(off))
        .ok_or(DexError::TruncatedTable(name))?;
    if off < HEADER_LEN || end > data.len() {
        return Err(DexError::TruncatedTable(name));
    }
    Ok((size, off))
}

/// Decodes MUTF-8 (CESU-style surrogates, two-byte NUL) up to the terminator.
fn decode_mutf8(bytes: &[u8]) -> Option<String> {
    let mut units = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == 0 {
            break;
        }
        let unit = if b < 0x80 {
            i += 1;
            b as u16
        } else if b & 0xe0 == 0xc0 {
            let b2 = *bytes.get(i + 1)?;
            i += 2;
            ((b as u16 & 0x1f) << 6) | (b2 as u16 & 0x3f)
        } else if b & 0xf0 == 0xe0 {
            let b2 = *bytes.get(i + 1)?;
            let b3 = *bytes.get(i + 2)?;
            i += 3;
            ((b as u16 & 0x0f) << 12) | ((b2 as u16 & 0x3f) << 6) | (b3 as u16 & 0x3f)
        } else {
            return None;
        };
        units.push(unit);
    }
    Some(String::from_utf16_lossy(&units))
}

impl<'a> Dex<'a> {
    fn parse(data: &'a [u8]) -> Result<Self, DexError> {
        if data.len() < 8
            || &data[0..4] != DEX_MAGIC
            || data[7] != 0
            || !SUPPORTED_VERSIONS.iter().any(|v| &data[4..7] == v.as_slice())
        {
            return Err(DexError::NotDex);
        }
        if data.len() < HEADER_LEN {
            return Err(DexError::TruncatedTable("header"));
        }
        let string_ids = table(data, 0x38, "string_ids", 4)?;
        let type_ids = table(data, 0x40, "type_ids", 4)?;
        let (proto_count, proto_off) = table(data, 0x48, "proto_ids", 12)?;
        let dex = Dex {
            data,
            string_ids,
            type_ids,
            proto_count,
        };
        for i in 0..proto_count {
            let at = proto_off + 12 * i;
            let shorty = u32_at(data, at).ok_or(DexError::TruncatedTable("proto_ids"))?;
            let ret = u32_at(data, at + 4).ok_or(DexError::TruncatedTable("proto_ids"))?;
            if shorty as usize >= string_ids.0 {
                return Err(DexError::IndexOutOfRange { table: "string_ids", index: shorty });
            }
            if ret as usize >= type_ids.0 {
                return Err(DexError::IndexOutOfRange { table: "type_ids", index: ret });
            }
        }
        Ok(dex)
    }

    fn string(&self, index: u32) -> Result<String, DexError> {
        let (size, off) = self.string_ids;
        if index as usize >= size {
            return Err(DexError::IndexOutOfRange { table: "string_ids", index });
        }
        let data_off = u32_at(self.data, off + 4 * index as usize)
            .ok_or(DexError::TruncatedTable("string_ids"))? as usize;
        let mut at = data_off;
        // uleb128 utf16 length, ignored: the terminator bounds the string
        for _ in 0..5 {
            let b = *self.data.get(at).ok_or(DexError::TruncatedTable("string_data"))?;
            at += 1;
            if b & 0x80 == 0 {
                break;
            }
        }
        let tail = self.data.get(at..).ok_or(DexError::TruncatedTable("string_data"))?;
        if !tail.contains(&0) {
            return Err(DexError::TruncatedTable("string_data"));
        }
        decode_mutf8(tail).ok_or(DexError::TruncatedTable("string_data"))
    }

    fn type_descriptor(&self, index: u16) -> Result<String, DexError> {
        let (size, off) = self.type_ids;
        if index as usize >= size {
            return Err(DexError::IndexOutOfRange { table: "type_ids", index: index as u32 });
        }
        let string = u32_at(self.data, off + 4 * index as usize).ok_or(DexError::TruncatedTable("type_ids"))?;
        self.string(string)
    }

    /// Every (class descriptor, method name) in `method_ids`, in table order.
    fn method_refs(&self) -> Result<Vec<(String, String)>, DexError> {
        let (count, off) = table(self.data, 0x58, "method_ids", 8)?;
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let at = off + 8 * i;
            let class = u16::from_le_bytes([self.data[at], self.data[at + 1]]);
            let proto = u16::from_le_bytes([self.data[at + 2], self.data[at + 3]]);
            let name = u32_at(self.data, at + 4).ok_or(DexError::TruncatedTable("method_ids"))?;
            if proto as usize >= self.proto_count {
                return Err(DexError::IndexOutOfRange { table: "proto_ids", index: proto as u32 });
            }
            out.push((self.type_descriptor(class)?, self.string(name)?));
        }
        Ok(out)
    }
}

/// Lists the `method_ids` table as (class descriptor, method name) pairs.
pub fn method_table(bytes: &[u8]) -> Result<Vec<(String, String)>, DexError> {
    Dex::parse(bytes)?.method_refs()
}

/// Reports which catalog categories the DEX file references.
pub fn scan_dex(bytes: &[u8], catalog: &ApiCatalog) -> Result<ApiHits, DexError> {
    let mut hits = ApiHits::default();
    for (class, method) in method_table(bytes)? {
        for category in catalog.classify(&class, &method) {
            hits.record(category, &class, &method);
        }
    }
    Ok(hits)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppDexScan {
    pub hits: ApiHits,
    pub scanned: Vec<String>,
    pub failures: Vec<(String, String)>,
    pub diagnostics: Vec<String>,
}

fn is_classes_dex(path: &str) -> bool {
    path.strip_prefix("classes")
        .and_then(|rest| rest.strip_suffix(".dex"))
        .is_some_and(|n| n.bytes().all(|b| b.is_ascii_digit()))
}

/// Unions [`scan_dex`] over every root-level `classes*.dex`. A corrupt file
/// is recorded in `failures` and does not discard hits from the others.
pub fn scan_app_dex(archive: &ApkArchive, catalog: &ApiCatalog) -> AppDexScan {
    let mut scan = AppDexScan::default();
    for entry in archive.entries().iter().filter(|e| is_classes_dex(&e.path)) {
        let result = archive
            .read_entry(&entry.path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| scan_dex(&bytes, catalog).map_err(|e| e.to_string()));
        match result {
            Ok(hits) => {
                scan.hits.merge(hits);
                scan.scanned.push(entry.path.clone());
            }
            Err(e) => scan.failures.push((entry.path.clone(), e)),
        }
    }
    if scan.scanned.is_empty() && scan.failures.is_empty() {
        scan.diagnostics.push("no classes*.dex entries".to_string());
    }
    scan
}

#[cfg(test)]
mod tests {
    use super::*;
    use droidae_testkit::DexBuilder;

    #[test]
    fn telephony_hit() {
        let dex = DexBuilder::new()
            .method("Landroid/telephony/TelephonyManager;", "getDeviceId")
            .method("Ljava/lang/Object;", "<init>")
            .build();
        let hits = scan_dex(&dex, &default_catalog()).unwrap();
        assert_eq!(hits.hit_categories().collect::<Vec<_>>(), ["telephony"]);
        assert_eq!(
            hits.evidence["telephony"],
            BTreeSet::from([(
                "Landroid/telephony/TelephonyManager;".to_string(),
                "getDeviceId".to_string()
            )])
        );
    }

    #[test]
    fn object_init_hits_nothing() {
        let dex = DexBuilder::new().method("Ljava/lang/Object;", "<init>").build();
        assert!(scan_dex(&dex, &default_catalog()).unwrap().is_empty());
    }

    #[test]
    fn wrong_magic() {
        assert_eq!(scan_dex(&[0, 0, 0, 0], &default_catalog()), Err(DexError::NotDex));
        let mut dex = DexBuilder::new().method("La;", "b").build();
        dex[4..7].copy_from_slice(b"036");
        assert_eq!(method_table(&dex), Err(DexError::NotDex));
    }

    #[test]
    fn all_supported_versions() {
        for v in ["035", "037", "038", "039"] {
            let dex = DexBuilder::new().version(v).method("La;", "b").build();
            assert_eq!(method_table(&dex).unwrap(), vec![("La;".into(), "b".into())]);
        }
    }

    #[test]
    fn catalog_shape() {
        let catalog = default_catalog();
        assert_eq!(catalog.categories().len(), 7);
        assert!(catalog
            .categories()
            .iter()
            .flat_map(|c| &c.matchers)
            .all(|m| m.class_prefix.starts_with('L')));
        assert_eq!(
            catalog.classify("Ljavax/crypto/Cipher;", "getInstance").collect::<Vec<_>>(),
            ["crypto"]
        );
        assert_eq!(
            catalog.classify("Ljava/lang/Runtime;", "exec").collect::<Vec<_>>(),
            ["runtime-exec"]
        );
        assert!(catalog.classify("Ljava/lang/Runtime;", "gc").next().is_none());
        assert_eq!(
            catalog.classify("Landroid/content/Context;", "getSystemService").collect::<Vec<_>>(),
            ["system-service"]
        );
    }

    #[test]
    fn catalog_rejects_bad_prefix_and_duplicates() {
        let c = |n: &str, p: &str| ApiCategory {
            name: n.into(),
            matchers: vec![ApiMatcher::prefix(p)],
        };
        assert_eq!(
            ApiCatalog::new(vec![c("a", "java/")]),
            Err(CatalogError::BadPrefix("java/".into()))
        );
        assert_eq!(
            ApiCatalog::new(vec![c("a", "La"), c("a", "Lb")]),
            Err(CatalogError::DuplicateCategory("a".into()))
        );
    }

    #[test]
    fn out_of_range_type_index() {
        let mut dex = DexBuilder::new().method("La;", "b").build();
        let off = u32_at(&dex, 0x5c).unwrap() as usize;
        dex[off..off + 2].copy_from_slice(&77u16.to_le_bytes());
        assert_eq!(
            method_table(&dex),
            Err(DexError::IndexOutOfRange { table: "type_ids", index: 77 })
        );
    }

    #[test]
    fn truncated_method_table() {
        let dex = DexBuilder::new().method("La;", "b").method("Lc;", "d").build();
        let off = u32_at(&dex, 0x5c).unwrap() as usize;
        assert_eq!(method_table(&dex[..off + 4]), Err(DexError::TruncatedTable("method_ids")));
    }

    #[test]
    fn mutf8_decoding() {
        let s = "a\u{0}é☃😀";
        let enc = droidae_testkit::dex::mutf8(s);
        let mut z = enc.clone();
        z.push(0);
        assert_eq!(decode_mutf8(&z).unwrap(), s);
    }

    #[test]
    fn classes_dex_names() {
        assert!(is_classes_dex("classes.dex"));
        assert!(is_classes_dex("classes12.dex"));
        assert!(!is_classes_dex("assets/classes.dex"));
        assert!(!is_classes_dex("classesX.dex"));
    }
}
