//! `AndroidManifest.xml` decoding, binary (AXML) and textual, down to the
//! facts the feature space needs: requested permissions and intent filters.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHUNK_XML: u16 = 0x0003;
pub const CHUNK_STRING_POOL: u16 = 0x0001;
pub const CHUNK_RESOURCE_MAP: u16 = 0x0180;
pub const CHUNK_START_ELEMENT: u16 = 0x0102;
pub const CHUNK_END_ELEMENT: u16 = 0x0103;
pub const STRING_POOL_UTF8: u32 = 0x100;

pub const ANDROID_NS: &str = "http://schemas.android.com/apk/res/android";
/// Resource id of `android:name`.
const ATTR_NAME_ID: u32 = 0x0101_0003;
const NO_INDEX: u32 = u32::MAX;
const TYPE_STRING: u8 = 0x03;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("not a binary XML document")]
    NotAxml,
    #[error("truncated chunk at offset {0}")]
    TruncatedChunk(usize),
    #[error("string index {0} out of range")]
    StringIndexOutOfRange(u32),
    #[error("malformed XML: {0}")]
    MalformedXml(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFacts {
    pub package: String,
    pub permissions: BTreeSet<String>,
    pub intent_actions: BTreeSet<String>,
    pub intent_categories: BTreeSet<String>,
}

/// Accumulates facts from a stream of start/end element events.
#[derive(Default)]
struct FactCollector {
    facts: ManifestFacts,
    stack: Vec<String>,
}

impl FactCollector {
    fn start(&mut self, element: &str, android_name: Option<&str>, package: Option<&str>) {
        let parent = self.stack.last().map(String::as_str);
        let name = android_name.map(str::trim).filter(|s| !s.is_empty());
        match (element, parent) {
            ("manifest", None) => {
                if let Some(p) = package {
                    self.facts.package = p.trim().to_string();
                }
            }
            ("uses-permission", _) => {
                if let Some(n) = name {
                    self.facts.permissions.insert(n.to_string());
                }
            }
            ("action", Some("intent-filter")) => {
                if let Some(n) = name {
                    self.facts.intent_actions.insert(n.to_string());
                }
            }
            ("category", Some("intent-filter")) => {
                if let Some(n) = name {
                    self.facts.intent_categories.insert(n.to_string());
                }
            }
            _ => {}
        }
        self.stack.push(element.to_string());
    }

    fn end(&mut self) {
        self.stack.pop();
    }
}

struct Reader<'a> {
    data: &'a [u8],
}

impl Reader<'_> {
    fn u16(&self, at: usize) -> Result<u16, ManifestError> {
        self.data
            .get(at..at.checked_add(2).ok_or(ManifestError::TruncatedChunk(at))?)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .ok_or(ManifestError::TruncatedChunk(at))
    }

    fn u32(&self, at: usize) -> Result<u32, ManifestError> {
        self.data
            .get(at..at.checked_add(4).ok_or(ManifestError::TruncatedChunk(at))?)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(ManifestError::TruncatedChunk(at))
    }
}

struct StringPool {
    strings: Vec<String>,
}

impl StringPool {
    fn get(&self, index: u32) -> Result<&str, ManifestError> {
        self.strings
            .get(index as usize)
            .map(String::as_str)
            .ok_or(ManifestError::StringIndexOutOfRange(index))
    }

    fn opt(&self, index: u32) -> Result<Option<&str>, ManifestError> {
        if index == NO_INDEX {
            Ok(None)
        } else {
            self.get(index).map(Some)
        }
    }
}

fn decode_length8(data: &[u8], at: &mut usize, chunk: usize) -> Result<usize, ManifestError> {
    let first = *data.get(*at).ok_or(ManifestError::TruncatedChunk(chunk))? as usize;
    *at += 1;
    if first & 0x80 == 0 {
        return Ok(first);
    }
    let second = *data.get(*at).ok_or(ManifestError::TruncatedChunk(chunk))? as usize;
    *at += 1;
    Ok(((first & 0x7f) << 8) | second)
}

fn decode_string_pool(r: &Reader<'_>, chunk: usize, chunk_end: usize) -> Result<StringPool, ManifestError> {
    let header_size = r.u16(chunk + 2)? as usize;
    let count = r.u32(chunk + 8)? as usize;
    let flags = r.u32(chunk + 16)?;
    let strings_start = r.u32(chunk + 20)? as usize;
    let offsets_at = chunk + header_size;
    if count > (chunk_end.saturating_sub(offsets_at)) / 4 {
        return Err(ManifestError::TruncatedChunk(chunk));
    }
    let data_at = chunk
        .checked_add(strings_start)
        .filter(|&d| d <= chunk_end)
        .ok_or(ManifestError::TruncatedChunk(chunk))?;
    let pool_data = &r.data[..chunk_end];
    let utf8 = flags & STRING_POOL_UTF8 != 0;

    let mut strings = Vec::with_capacity(count);
    for i in 0..count {
        let offset = r.u32(offsets_at + 4 * i)? as usize;
        let mut at = data_at
            .checked_add(offset)
            .ok_or(ManifestError::TruncatedChunk(chunk))?;
        let s = if utf8 {
            let _utf16_len = decode_length8(pool_data, &mut at, chunk)?;
            let byte_len = decode_length8(pool_data, &mut at, chunk)?;
            let bytes = pool_data
                .get(at..at + byte_len)
                .ok_or(ManifestError::TruncatedChunk(chunk))?;
            String::from_utf8_lossy(bytes).into_owned()
        } else {
            let rd = Reader { data: pool_data };
            let mut len = rd.u16(at)? as usize;
            at += 2;
            if len & 0x8000 != 0 {
                len = ((len & 0x7fff) << 16) | rd.u16(at)? as usize;
                at += 2;
            }
            let bytes = at
                .checked_add(len.checked_mul(2).ok_or(ManifestError::TruncatedChunk(chunk))?)
                .and_then(|end| pool_data.get(at..end))
                .ok_or(ManifestError::TruncatedChunk(chunk))?;
            let units: Vec<u16> = bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            String::from_utf16_lossy(&units)
        };
        strings.push(s);
    }
    Ok(StringPool { strings })
}

/// Decodes a binary `AndroidManifest.xml`.
pub fn decode_axml(bytes: &[u8]) -> Result<ManifestFacts, ManifestError> {
    let r = Reader { data: bytes };
    if bytes.len() < 8 || r.u16(0)? != CHUNK_XML {
        return Err(ManifestError::NotAxml);
    }
    let header_size = r.u16(2)? as usize;
    let declared = r.u32(4)? as usize;
    if declared > bytes.len() {
        return Err(ManifestError::TruncatedChunk(0));
    }
    let end = declared;
    if header_size < 8 || header_size > end {
        return Err(ManifestError::TruncatedChunk(0));
    }

    let mut pool: Option<StringPool> = None;
    let mut resource_ids: Vec<u32> = Vec::new();
    let mut collector = FactCollector::default();
    let mut at = header_size;
    while at + 8 <= end {
        let kind = r.u16(at)?;
        let chunk_header = r.u16(at + 2)? as usize;
        let size = r.u32(at + 4)? as usize;
        if size < 8 || chunk_header > size || size > end - at {
            return Err(ManifestError::TruncatedChunk(at));
        }
        let chunk_end = at + size;
        match kind {
            CHUNK_STRING_POOL if pool.is_none() => {
                if chunk_header < 0x1c {
                    return Err(ManifestError::TruncatedChunk(at));
                }
                pool = Some(decode_string_pool(&r, at, chunk_end)?);
            }
            CHUNK_RESOURCE_MAP => {
                resource_ids = (at + chunk_header..chunk_end)
                    .step_by(4)
                    .take_while(|o| o + 4 <= chunk_end)
                    .map(|o| r.u32(o))
                    .collect::<Result<_, _>>()?;
            }
            CHUNK_START_ELEMENT => {
                let pool = pool.as_ref().ok_or(ManifestError::TruncatedChunk(at))?;
                let ext = at + chunk_header;
                if ext + 20 > chunk_end {
                    return Err(ManifestError::TruncatedChunk(at));
                }
                let element = pool.get(r.u32(ext + 4)?)?;
                let attr_start = r.u16(ext + 8)? as usize;
                let attr_size = r.u16(ext + 10)? as usize;
                let attr_count = r.u16(ext + 12)? as usize;
                if attr_size < 20 {
                    return Err(ManifestError::TruncatedChunk(at));
                }
                let mut android_name = None;
                let mut package = None;
                for i in 0..attr_count {
                    let a = ext + attr_start + i * attr_size;
                    if a + 20 > chunk_end {
                        return Err(ManifestError::TruncatedChunk(at));
                    }
                    let ns = pool.opt(r.u32(a)?)?;
                    let name_index = r.u32(a + 4)?;
                    let name = pool.get(name_index)?;
                    let raw = r.u32(a + 8)?;
                    let data_type = *bytes.get(a + 15).ok_or(ManifestError::TruncatedChunk(at))?;
                    let data = r.u32(a + 16)?;
                    let value = if raw != NO_INDEX {
                        Some(pool.get(raw)?)
                    } else if data_type == TYPE_STRING {
                        Some(pool.get(data)?)
                    } else {
                        None
                    };
                    let by_id = resource_ids.get(name_index as usize) == Some(&ATTR_NAME_ID);
                    let is_android_name = by_id || (name == "name" && ns == Some(ANDROID_NS));
                    if is_android_name {
                        android_name = value;
                    } else if name == "package" && ns.is_none() {
                        package = value;
                    }
                }
                collector.start(element, android_name, package);
            }
            CHUNK_END_ELEMENT => collector.end(),
            _ => {}
        }
        at = chunk_end;
    }
    Ok(collector.facts)
}

/// Reads a textual manifest with the same extraction contract as [`decode_axml`].
pub fn parse_plaintext_manifest(bytes: &[u8]) -> Result<ManifestFacts, ManifestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ManifestError::MalformedXml(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| ManifestError::MalformedXml(e.to_string()))?;
    let mut collector = FactCollector::default();
    fn walk(node: roxmltree::Node<'_, '_>, c: &mut FactCollector) {
        let name = node.tag_name().name();
        c.start(
            name,
            node.attribute((ANDROID_NS, "name")),
            node.attribute("package"),
        );
        for child in node.children().filter(|n| n.is_element()) {
            walk(child, c);
        }
        c.end();
    }
    walk(doc.root_element(), &mut collector);
    Ok(collector.facts)
}

/// Decodes either encoding, choosing by the leading bytes.
pub fn decode_manifest(bytes: &[u8]) -> Result<ManifestFacts, ManifestError> {
    if bytes.len() >= 2 && u16::from_le_bytes([bytes[0], bytes[1]]) == CHUNK_XML {
        decode_axml(bytes)
    } else {
        parse_plaintext_manifest(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use droidae_testkit::{compile_manifest, AxmlOptions, MANIFEST_FIXTURES};

    const CAMERA: &str = r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="p"><uses-permission android:name="android.permission.CAMERA"/></manifest>"#;

    #[test]
    fn plaintext_permission() {
        let facts = parse_plaintext_manifest(CAMERA.as_bytes()).unwrap();
        assert_eq!(
            facts.permissions.into_iter().collect::<Vec<_>>(),
            ["android.permission.CAMERA"]
        );
        assert_eq!(facts.package, "p");
    }

    #[test]
    fn duplicate_permissions_collapse() {
        let text = r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android"><uses-permission android:name="a.B"/><uses-permission android:name="a.B"/></manifest>"#;
        assert_eq!(parse_plaintext_manifest(text.as_bytes()).unwrap().permissions.len(), 1);
    }

    #[test]
    fn unclosed_tag_is_malformed() {
        assert!(matches!(
            parse_plaintext_manifest(b"<manifest><application></manifest>"),
            Err(ManifestError::MalformedXml(_))
        ));
    }

    #[test]
    fn plain_text_is_not_axml() {
        assert_eq!(decode_axml(CAMERA.as_bytes()), Err(ManifestError::NotAxml));
        assert_eq!(decode_axml(&[]), Err(ManifestError::NotAxml));
    }

    #[test]
    fn launcher_fixture_decodes() {
        let (_, text) = MANIFEST_FIXTURES[0];
        let facts = decode_axml(&compile_manifest(text, AxmlOptions::default())).unwrap();
        assert!(facts.permissions.contains("android.permission.INTERNET"));
        assert!(facts.intent_actions.contains("android.intent.action.MAIN"));
        assert!(facts.intent_categories.contains("android.intent.category.LAUNCHER"));
        assert_eq!(facts.package, "com.example.launcher");
    }

    #[test]
    fn zero_permissions() {
        let text = MANIFEST_FIXTURES.iter().find(|(n, _)| *n == "no-permissions").unwrap().1;
        let facts = decode_axml(&compile_manifest(text, AxmlOptions::default())).unwrap();
        assert!(facts.permissions.is_empty());
    }

    #[test]
    fn permission_definitions_are_not_requests() {
        let text = MANIFEST_FIXTURES.iter().find(|(n, _)| *n == "sms-dropper").unwrap().1;
        let facts = parse_plaintext_manifest(text.as_bytes()).unwrap();
        assert!(!facts.permissions.contains("ru.bad.sms.PRIVATE"));
        assert_eq!(facts.permissions.len(), 5);
    }

    #[test]
    fn names_resolved_through_resource_map() {
        let (_, text) = MANIFEST_FIXTURES[0];
        let opts = AxmlOptions {
            obfuscate_names: true,
            ..Default::default()
        };
        let facts = decode_axml(&compile_manifest(text, opts)).unwrap();
        assert_eq!(facts, parse_plaintext_manifest(text.as_bytes()).unwrap());
    }

    #[test]
    fn truncation_is_typed() {
        let (_, text) = MANIFEST_FIXTURES[3];
        let bytes = compile_manifest(text, AxmlOptions::default());
        for cut in [9, 40, bytes.len() / 2] {
            let mut short = bytes[..cut].to_vec();
            // keep the declared size so the missing bytes are noticed
            short[4..8].copy_from_slice(&(bytes.len() as u32).to_le_bytes());
            assert!(decode_axml(&short).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn bad_string_index() {
        let (_, text) = MANIFEST_FIXTURES[1];
        let mut bytes = compile_manifest(text, AxmlOptions::default());
        // first start-element chunk: patch its element-name index
        let at = (8..bytes.len() - 4)
            .find(|&i| bytes[i..i + 2] == CHUNK_START_ELEMENT.to_le_bytes() && bytes[i + 2..i + 4] == [0x10, 0])
            .unwrap();
        bytes[at + 20..at + 24].copy_from_slice(&9999u32.to_le_bytes());
        assert_eq!(decode_axml(&bytes), Err(ManifestError::StringIndexOutOfRange(9999)));
    }
}
