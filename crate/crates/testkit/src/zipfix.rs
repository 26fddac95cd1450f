use std::io::{Cursor, Write};

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipWriter};

/// Thin wrapper over `zip::ZipWriter` writing into memory.
pub struct ZipBuilder {
    writer: ZipWriter<Cursor<Vec<u8>>>,
}

impl Default for ZipBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl ZipBuilder {
    pub fn new() -> Self {
        Self {
            writer: ZipWriter::new(Cursor::new(Vec::new())),
        }
    }

    fn add(mut self, name: &str, data: &[u8], method: CompressionMethod) -> Self {
        let options = SimpleFileOptions::default()
            .compression_method(method)
            .last_modified_time(zip::DateTime::default());
        self.writer.start_file(name, options).expect("start entry");
        self.writer.write_all(data).expect("write entry");
        self
    }

    pub fn stored(self, name: &str, data: &[u8]) -> Self {
        self.add(name, data, CompressionMethod::Stored)
    }

    pub fn deflated(self, name: &str, data: &[u8]) -> Self {
        self.add(name, data, CompressionMethod::Deflated)
    }

    pub fn finish(self) -> Vec<u8> {
        self.writer.finish().expect("finish archive").into_inner()
    }
}

/// Rewrites every occurrence of the entry name `from` with `to` (same length),
/// in both local and central headers. Used to forge duplicate-path archives,
/// which no well-behaved writer produces.
pub fn rename_entry(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
    assert_eq!(from.len(), to.len(), "names must have equal length");
    let mut out = bytes.to_vec();
    let needle = from.as_bytes();
    let mut i = 0;
    while i + needle.len() <= out.len() {
        if &out[i..i + needle.len()] == needle {
            out[i..i + needle.len()].copy_from_slice(to.as_bytes());
            i += needle.len();
        } else {
            i += 1;
        }
    }
    out
}

/// CRC-32 as computed by the `zip` crate writer's dependency chain; exposed so
/// tests can compare against a value not produced by the reader under test.
pub fn central_crc(bytes: &[u8], name: &str) -> u32 {
    let archive = zip::ZipArchive::new(Cursor::new(bytes)).expect("valid archive");
    let mut archive = archive;
    let file = archive.by_name(name).expect("entry present");
    file.crc32()
}
