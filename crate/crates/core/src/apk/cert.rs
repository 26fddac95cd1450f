//! JAR-style (v1) signature checks: manifest and signature-file digests plus
//! the signer certificate's validity window. Cryptographic verification of
//! the signature block itself and chain validation are out of scope.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use cms::content_info::ContentInfo;
use cms::signed_data::{CertificateSet, SignedData};
use der::Decode;
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256, Sha384, Sha512};

use super::ApkArchive;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateStatus {
    Valid,
    Expired,
    NotYetValid,
    DigestMismatch,
    MissingSignature,
    Unparsable,
}

impl CertificateStatus {
    pub const ALL: [CertificateStatus; 6] = [
        Self::Valid,
        Self::Expired,
        Self::NotYetValid,
        Self::DigestMismatch,
        Self::MissingSignature,
        Self::Unparsable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Valid => "valid",
            Self::Expired => "expired",
            Self::NotYetValid => "not-yet-valid",
            Self::DigestMismatch => "digest-mismatch",
            Self::MissingSignature => "missing-signature",
            Self::Unparsable => "unparsable",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateVerdict {
    pub status: CertificateStatus,
    pub not_before: Option<Timestamp>,
    pub not_after: Option<Timestamp>,
    pub subject: Option<String>,
    pub detail: Option<String>,
}

impl CertificateVerdict {
    fn bare(status: CertificateStatus, detail: impl Into<String>) -> Self {
        Self {
            status,
            not_before: None,
            not_after: None,
            subject: None,
            detail: Some(detail.into()),
        }
    }

    /// A verdict that satisfies the `valid` status with no certificate details.
    pub fn assumed_valid() -> Self {
        Self {
            status: CertificateStatus::Valid,
            not_before: None,
            not_after: None,
            subject: None,
            detail: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum DigestAlg {
    Sha1,
    Sha256,
    Sha384,
    Sha512,
}

impl DigestAlg {
    /// Maps an attribute prefix such as `SHA-256` to the algorithm.
    fn from_prefix(prefix: &str) -> Option<Self> {
        match prefix.to_ascii_uppercase().as_str() {
            "SHA1" | "SHA-1" => Some(Self::Sha1),
            "SHA-256" => Some(Self::Sha256),
            "SHA-384" => Some(Self::Sha384),
            "SHA-512" => Some(Self::Sha512),
            _ => None,
        }
    }

    fn digest(self, data: &[u8]) -> Vec<u8> {
        match self {
            Self::Sha1 => Sha1::digest(data).to_vec(),
            Self::Sha256 => Sha256::digest(data).to_vec(),
            Self::Sha384 => Sha384::digest(data).to_vec(),
            Self::Sha512 => Sha512::digest(data).to_vec(),
        }
    }
}

#[derive(Debug)]
struct Section<'a> {
    raw: &'a [u8],
    attrs: Vec<(String, String)>,
}

impl Section<'_> {
    fn get(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.as_str())
    }

    fn name(&self) -> Option<&str> {
        self.get("Name")
    }

    /// Digest attributes ending in `suffix`, e.g. `-Digest` or `-Digest-Manifest`.
    fn digests(&self, suffix: &str) -> Vec<(DigestAlg, Option<Vec<u8>>)> {
        self.attrs
            .iter()
            .filter_map(|(k, v)| {
                let upper = k.to_ascii_uppercase();
                let prefix = upper.strip_suffix(&suffix.to_ascii_uppercase())?;
                let alg = DigestAlg::from_prefix(prefix)?;
                Some((alg, BASE64.decode(v.trim()).ok()))
            })
            .collect()
    }
}

/// Splits a manifest-format file into sections, keeping each section's raw
/// bytes (terminating blank line included) for signature-file digests.
fn parse_sections(data: &[u8]) -> Vec<Section<'_>> {
    let mut sections = Vec::new();
    let mut start = 0;
    let mut attrs: Vec<(String, String)> = Vec::new();
    let mut pos = 0;
    while pos < data.len() {
        let line_end = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(data.len(), |i| pos + i + 1);
        let line = &data[pos..line_end];
        let content = line
            .strip_suffix(b"\n")
            .unwrap_or(line);
        let content = content.strip_suffix(b"\r").unwrap_or(content);
        pos = line_end;
        if content.is_empty() {
            if !attrs.is_empty() {
                sections.push(Section {
                    raw: &data[start..pos],
                    attrs: std::mem::take(&mut attrs),
                });
            }
            start = pos;
            continue;
        }
        let text = String::from_utf8_lossy(content);
        if let Some(rest) = text.strip_prefix(' ') {
            if let Some((_, v)) = attrs.last_mut() {
                v.push_str(rest);
            }
        } else if let Some((k, v)) = text.split_once(':') {
            attrs.push((k.trim().to_string(), v.trim_start().to_string()));
        }
    }
    if !attrs.is_empty() {
        sections.push(Section {
            raw: &data[start..],
            attrs,
        });
    }
    sections
}

fn is_signature_block(path: &str) -> bool {
    let Some(name) = path.strip_prefix("META-INF/") else {
        return false;
    };
    if name.contains('/') {
        return false;
    }
    let upper = name.to_ascii_uppercase();
    [".RSA", ".DSA", ".EC"].iter().any(|ext| upper.ends_with(ext))
}

struct SignerCert {
    not_before: Timestamp,
    not_after: Timestamp,
    subject: String,
}

fn parse_signer_certificate(block: &[u8]) -> Result<SignerCert, String> {
    let info = ContentInfo::from_der(block).map_err(|e| format!("content info: {e}"))?;
    let signed: SignedData = info
        .content
        .decode_as()
        .map_err(|e| format!("signed data: {e}"))?;
    let CertificateSet(set) = signed
        .certificates
        .ok_or_else(|| "signature block carries no certificates".to_string())?;
    let cert = set
        .iter()
        .find_map(|c| match c {
            cms::cert::CertificateChoices::Certificate(cert) => Some(cert),
            _ => None,
        })
        .ok_or_else(|| "no X.509 certificate in signature block".to_string())?;
    let validity = &cert.tbs_certificate.validity;
    let secs = |t: &x509_cert::time::Time| Timestamp(t.to_unix_duration().as_secs() as i64);
    Ok(SignerCert {
        not_before: secs(&validity.not_before),
        not_after: secs(&validity.not_after),
        subject: cert.tbs_certificate.subject.to_string(),
    })
}

/// Checks every entry digest listed in `MANIFEST.MF`. Returns the first
/// failure as text.
fn check_manifest_digests(archive: &ApkArchive, manifest: &[u8]) -> Result<(), String> {
    for section in parse_sections(manifest).iter().skip(1) {
        let Some(name) = section.name() else { continue };
        if name.starts_with("META-INF/") && !name[9..].contains('/') {
            continue;
        }
        for (alg, expected) in section.digests("-Digest") {
            let expected = expected.ok_or_else(|| format!("undecodable digest for {name}"))?;
            let data = archive
                .read_entry(name)
                .map_err(|e| format!("listed entry {name}: {e}"))?;
            if alg.digest(&data) != expected {
                return Err(format!("digest of {name} does not match MANIFEST.MF"));
            }
        }
    }
    Ok(())
}

/// Checks a signature file against the manifest: the whole-manifest digest if
/// present and matching, otherwise every per-section digest.
fn check_signature_file(sf: &[u8], manifest: &[u8]) -> Result<(), String> {
    let sf_sections = parse_sections(sf);
    let whole = sf_sections
        .first()
        .map(|main| main.digests("-Digest-Manifest"))
        .unwrap_or_default();
    if !whole.is_empty()
        && whole
            .iter()
            .all(|(alg, d)| d.as_deref() == Some(alg.digest(manifest).as_slice()))
    {
        return Ok(());
    }
    let mf_sections = parse_sections(manifest);
    let mut checked = 0;
    for sf_section in sf_sections.iter().skip(1) {
        let Some(name) = sf_section.name() else { continue };
        let mf_section = mf_sections
            .iter()
            .find(|s| s.name() == Some(name))
            .ok_or_else(|| format!("{name} is signed but absent from MANIFEST.MF"))?;
        for (alg, expected) in sf_section.digests("-Digest") {
            if expected.as_deref() != Some(alg.digest(mf_section.raw).as_slice()) {
                return Err(format!("signature file digest of section {name} does not match"));
            }
            checked += 1;
        }
    }
    if checked == 0 && !whole.is_empty() {
        return Err("manifest digest in signature file does not match".into());
    }
    Ok(())
}

/// v1 verification at `reference_time`. Never fails: every defect is a status.
///
/// Precedence when several defects coexist: missing-signature, unparsable,
/// digest-mismatch, not-yet-valid, expired.
pub fn verify_certificate(archive: &ApkArchive, reference_time: Timestamp) -> CertificateVerdict {
    use CertificateStatus::*;

    let block_path = archive
        .entries()
        .iter()
        .map(|e| e.path.as_str())
        .find(|p| is_signature_block(p));
    let Some(block_path) = block_path else {
        return CertificateVerdict::bare(MissingSignature, "no META-INF signature block");
    };
    if !archive.contains("META-INF/MANIFEST.MF") {
        return CertificateVerdict::bare(MissingSignature, "no META-INF/MANIFEST.MF");
    }

    let block = match archive.read_entry(block_path) {
        Ok(b) => b,
        Err(e) => return CertificateVerdict::bare(Unparsable, e.to_string()),
    };
    let signer = match parse_signer_certificate(&block) {
        Ok(s) => s,
        Err(e) => return CertificateVerdict::bare(Unparsable, e),
    };
    let stem = &block_path[..block_path.rfind('.').unwrap_or(block_path.len())];
    let sf_path = archive
        .entries()
        .iter()
        .map(|e| e.path.as_str())
        .find(|p| {
            p.len() == stem.len() + 3
                && p.starts_with(stem)
                && p[stem.len()..].eq_ignore_ascii_case(".SF")
        });

    let mut verdict = CertificateVerdict {
        status: Valid,
        not_before: Some(signer.not_before),
        not_after: Some(signer.not_after),
        subject: Some(signer.subject),
        detail: None,
    };
    let Some(sf_path) = sf_path else {
        verdict.status = Unparsable;
        verdict.detail = Some(format!("no signature file for {block_path}"));
        return verdict;
    };

    let digests = archive
        .read_entry("META-INF/MANIFEST.MF")
        .map_err(|e| e.to_string())
        .and_then(|mf| {
            let sf = archive.read_entry(sf_path).map_err(|e| e.to_string())?;
            check_signature_file(&sf, &mf)?;
            check_manifest_digests(archive, &mf)
        });
    if let Err(detail) = digests {
        verdict.status = DigestMismatch;
        verdict.detail = Some(detail);
    } else if reference_time < signer.not_before {
        verdict.status = NotYetValid;
    } else if reference_time > signer.not_after {
        verdict.status = Expired;
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_keep_raw_bytes_and_continuations() {
        let mf = b"Manifest-Version: 1.0\r\n\r\nName: res/a-very-long-name\r\n .txt\r\nSHA-256-Digest: abc=\r\n\r\n";
        let sections = parse_sections(mf);
        assert_eq!(sections.len(), 2);
        assert_eq!(sections[1].name(), Some("res/a-very-long-name.txt"));
        assert!(sections[1].raw.starts_with(b"Name:"));
        assert!(sections[1].raw.ends_with(b"\r\n\r\n"));
    }

    #[test]
    fn signature_block_paths() {
        assert!(is_signature_block("META-INF/CERT.RSA"));
        assert!(is_signature_block("META-INF/key0.ec"));
        assert!(!is_signature_block("META-INF/sub/CERT.RSA"));
        assert!(!is_signature_block("assets/CERT.RSA"));
        assert!(!is_signature_block("META-INF/CERT.SF"));
    }

    #[test]
    fn status_names_round_trip() {
        for s in CertificateStatus::ALL {
            assert_eq!(CertificateStatus::parse(s.name()), Some(s));
        }
    }
}
