//! APK container access: a ZIP central-directory reader with CRC-checked
//! entry extraction, the embedded-APK asset scan, and v1 signature checks.

mod cert;

use std::collections::HashSet;
use std::io::Read;

use flate2::read::DeflateDecoder;
use thiserror::Error;

pub use cert::{verify_certificate, CertificateStatus, CertificateVerdict};

pub const EOCD_SIGNATURE: u32 = 0x0605_4b50;
pub const CENTRAL_HEADER_SIGNATURE: u32 = 0x0201_4b50;
pub const LOCAL_HEADER_SIGNATURE: u32 = 0x0403_4b50;

const EOCD_LEN: usize = 22;
const CENTRAL_HEADER_LEN: usize = 46;
const LOCAL_HEADER_LEN: usize = 30;
const MAX_COMMENT_LEN: usize = 0xffff;
const APK_SIG_BLOCK_MAGIC: &[u8; 16] = b"APK Sig Block 42";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchiveError {
    #[error("not a ZIP archive: no end-of-central-directory record")]
    NotZip,
    #[error("truncated archive: {0}")]
    TruncatedArchive(String),
    #[error("duplicate entry path {0:?}")]
    DuplicateEntryPath(String),
    #[error("entry not found: {0:?}")]
    EntryNotFound(String),
    #[error("CRC mismatch in {path:?}: declared {declared:08x}, computed {computed:08x}")]
    CrcMismatch {
        path: String,
        declared: u32,
        computed: u32,
    },
    #[error("cannot decompress {path:?}: {reason}")]
    DecompressFailure { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressionMethod {
    Stored,
    Deflated,
    Unsupported(u16),
}

impl CompressionMethod {
    fn from_raw(raw: u16) -> Self {
        match raw {
            0 => Self::Stored,
            8 => Self::Deflated,
            other => Self::Unsupported(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZipEntry {
    pub path: String,
    pub compressed_size: u32,
    pub uncompressed_size: u32,
    pub crc32: u32,
    pub method: CompressionMethod,
    pub encrypted: bool,
    local_header_offset: u32,
}

/// An opened APK. Immutable after [`open_archive`]; entries are decompressed
/// on demand by [`ApkArchive::read_entry`].
#[derive(Debug, Clone)]
pub struct ApkArchive {
    source_id: String,
    data: Vec<u8>,
    entries: Vec<ZipEntry>,
    has_v2_signing_block: bool,
}

fn le_u16(data: &[u8], at: usize) -> Option<u16> {
    data.get(at..at.checked_add(2)?)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
}

fn le_u32(data: &[u8], at: usize) -> Option<u32> {
    data.get(at..at.checked_add(4)?)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn find_eocd(data: &[u8]) -> Option<usize> {
    if data.len() < EOCD_LEN {
        return None;
    }
    let last = data.len() - EOCD_LEN;
    let first = last.saturating_sub(MAX_COMMENT_LEN);
    (first..=last)
        .rev()
        .find(|&i| le_u32(data, i) == Some(EOCD_SIGNATURE))
}

fn truncated(what: impl Into<String>) -> ArchiveError {
    ArchiveError::TruncatedArchive(what.into())
}

/// Parses the central directory of `bytes`. Entry data is not touched.
pub fn open_archive(bytes: impl Into<Vec<u8>>, source_id: &str) -> Result<ApkArchive, ArchiveError> {
    let data = bytes.into();
    let eocd = find_eocd(&data).ok_or(ArchiveError::NotZip)?;
    let count = le_u16(&data, eocd + 10).ok_or_else(|| truncated("end record"))? as usize;
    let cd_size = le_u32(&data, eocd + 12).ok_or_else(|| truncated("end record"))? as usize;
    let cd_offset = le_u32(&data, eocd + 16).ok_or_else(|| truncated("end record"))? as usize;
    if cd_offset.checked_add(cd_size).is_none_or(|end| end > eocd) {
        return Err(truncated(format!(
            "central directory at {cd_offset}+{cd_size} overruns end record at {eocd}"
        )));
    }

    let mut entries = Vec::with_capacity(count.min(cd_size / CENTRAL_HEADER_LEN + 1));
    let mut seen = HashSet::new();
    let mut at = cd_offset;
    for index in 0..count {
        let header = |off: usize| -> Result<u32, ArchiveError> {
            le_u32(&data, at + off).ok_or_else(|| truncated(format!("central header {index}")))
        };
        let header16 = |off: usize| -> Result<u16, ArchiveError> {
            le_u16(&data, at + off).ok_or_else(|| truncated(format!("central header {index}")))
        };
        if at + CENTRAL_HEADER_LEN > cd_offset + cd_size || header(0)? != CENTRAL_HEADER_SIGNATURE {
            return Err(truncated(format!("central header {index} missing at offset {at}")));
        }
        let flags = header16(8)?;
        let method = CompressionMethod::from_raw(header16(10)?);
        let crc32 = header(16)?;
        let compressed_size = header(20)?;
        let uncompressed_size = header(24)?;
        let name_len = header16(28)? as usize;
        let extra_len = header16(30)? as usize;
        let comment_len = header16(32)? as usize;
        let local_header_offset = header(42)?;
        let name_start = at + CENTRAL_HEADER_LEN;
        let name = data
            .get(name_start..name_start + name_len)
            .ok_or_else(|| truncated(format!("name of central header {index}")))?;
        let path = String::from_utf8_lossy(name).into_owned();
        if !seen.insert(path.clone()) {
            return Err(ArchiveError::DuplicateEntryPath(path));
        }
        entries.push(ZipEntry {
            path,
            compressed_size,
            uncompressed_size,
            crc32,
            method,
            encrypted: flags & 1 != 0,
            local_header_offset,
        });
        at = name_start + name_len + extra_len + comment_len;
    }

    let has_v2_signing_block = cd_offset >= 24
        && data.get(cd_offset - 16..cd_offset) == Some(APK_SIG_BLOCK_MAGIC.as_slice());

    Ok(ApkArchive {
        source_id: source_id.to_string(),
        data,
        entries,
        has_v2_signing_block,
    })
}

impl ApkArchive {
    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Entries in central-directory order.
    pub fn entries(&self) -> &[ZipEntry] {
        &self.entries
    }

    pub fn entry(&self, path: &str) -> Option<&ZipEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entry(path).is_some()
    }

    /// True when an APK Signature Scheme v2/v3 block precedes the central
    /// directory. Recorded only; such blocks are not verified.
    pub fn has_v2_signing_block(&self) -> bool {
        self.has_v2_signing_block
    }

    /// Decompresses one entry and checks its size and CRC-32.
    pub fn read_entry(&self, path: &str) -> Result<Vec<u8>, ArchiveError> {
        let entry = self
            .entry(path)
            .ok_or_else(|| ArchiveError::EntryNotFound(path.to_string()))?;
        let fail = |reason: String| ArchiveError::DecompressFailure {
            path: path.to_string(),
            reason,
        };
        if entry.encrypted {
            return Err(fail("encrypted entries are not supported".into()));
        }

        let local = entry.local_header_offset as usize;
        if le_u32(&self.data, local) != Some(LOCAL_HEADER_SIGNATURE) {
            return Err(fail(format!("no local header at offset {local}")));
        }
        let name_len = le_u16(&self.data, local + 26).ok_or_else(|| fail("short local header".into()))?;
        let extra_len = le_u16(&self.data, local + 28).ok_or_else(|| fail("short local header".into()))?;
        let start = local + LOCAL_HEADER_LEN + name_len as usize + extra_len as usize;
        let raw = start
            .checked_add(entry.compressed_size as usize)
            .and_then(|end| self.data.get(start..end))
            .ok_or_else(|| fail("entry data runs past end of archive".into()))?;

        let expected = entry.uncompressed_size as usize;
        let out = match entry.method {
            CompressionMethod::Stored => raw.to_vec(),
            CompressionMethod::Deflated => {
                let mut out = Vec::with_capacity(expected.min(raw.len().saturating_mul(8)));
                // Read at most one byte past the declared size so bombs stay bounded.
                DeflateDecoder::new(raw)
                    .take(expected as u64 + 1)
                    .read_to_end(&mut out)
                    .map_err(|e| fail(e.to_string()))?;
                out
            }
            CompressionMethod::Unsupported(m) => {
                return Err(fail(format!("unsupported compression method {m}")))
            }
        };
        if out.len() != expected {
            return Err(fail(format!(
                "declared {expected} bytes, decompressed {}",
                out.len()
            )));
        }
        let computed = crc32fast::hash(&out);
        if computed != entry.crc32 {
            return Err(ArchiveError::CrcMismatch {
                path: path.to_string(),
                declared: entry.crc32,
                computed,
            });
        }
        Ok(out)
    }

    /// Paths of entries that fail to decompress cleanly.
    pub fn corrupt_entries(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| self.read_entry(&e.path).is_err())
            .map(|e| e.path.as_str())
            .collect()
    }
}

/// Outcome of scanning `assets/` for nested APKs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssetScan {
    pub embedded_apk: bool,
    pub nested: Vec<String>,
    pub unreadable: usize,
}

/// Looks for entries under `assets/` that are themselves ZIP archives holding
/// an `AndroidManifest.xml`. File extensions are ignored.
pub fn scan_assets(archive: &ApkArchive) -> AssetScan {
    let mut scan = AssetScan::default();
    for entry in archive.entries().iter().filter(|e| e.path.starts_with("assets/")) {
        if entry.path.ends_with('/') {
            continue;
        }
        let bytes = match archive.read_entry(&entry.path) {
            Ok(b) => b,
            Err(_) => {
                scan.unreadable += 1;
                continue;
            }
        };
        if le_u32(&bytes, 0) != Some(LOCAL_HEADER_SIGNATURE) {
            continue;
        }
        match open_archive(bytes, &entry.path) {
            Ok(inner) if inner.contains("AndroidManifest.xml") => {
                scan.embedded_apk = true;
                scan.nested.push(entry.path.clone());
            }
            Ok(_) => {}
            Err(_) => scan.unreadable += 1,
        }
    }
    scan
}

pub fn scan_assets_for_apk(archive: &ApkArchive) -> bool {
    scan_assets(archive).embedded_apk
}
