//! Feature-vector files: a header line with the vocabulary fingerprint, then
//! one CSV record per app: `app-id,label,bit0,…,bitN`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureVector, Fingerprint};

const MAGIC: &str = "# droidae-vectors v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
    Unknown,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Self::Benign => "benign",
            Self::Malicious => "malicious",
            Self::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Self::Benign),
            "malicious" => Ok(Self::Malicious),
            "unknown" => Ok(Self::Unknown),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorRecord {
    pub vector: FeatureVector,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorFile {
    pub fingerprint: Fingerprint,
    pub dimension: usize,
    /// Extra `#` comment lines written after the header (run provenance).
    pub comments: Vec<String>,
    pub records: Vec<VectorRecord>,
}

fn format_err(msg: impl Into<String>) -> FeatureError {
    FeatureError::VectorFormat(msg.into())
}

pub fn write_vectors<W: Write>(out: W, file: &VectorFile) -> Result<(), FeatureError> {
    let mut out = out;
    writeln!(
        out,
        "{MAGIC} fingerprint={} dimension={}",
        file.fingerprint, file.dimension
    )?;
    for c in &file.comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(out);
    for r in &file.records {
        if r.vector.fingerprint != file.fingerprint || r.vector.bits.len() != file.dimension {
            return Err(format_err(format!("record {:?} does not match the file vocabulary", r.vector.app_id)));
        }
        let mut row = Vec::with_capacity(file.dimension + 2);
        row.push(r.vector.app_id.clone());
        row.push(r.label.name().to_string());
        row.extend(r.vector.bits.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        writer.write_record(&row).map_err(|e| format_err(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_vectors<R: BufRead>(input: R) -> Result<VectorFile, FeatureError> {
    let mut input = input;
    let mut header = String::new();
    input.read_line(&mut header)?;
    let rest = header
        .trim_end()
        .strip_prefix(MAGIC)
        .ok_or_else(|| format_err("missing droidae-vectors header"))?;
    let mut fingerprint = None;
    let mut dimension = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("fingerprint", v)) => {
                fingerprint = Some(v.parse::<Fingerprint>().map_err(|e| format_err(e.to_string()))?)
            }
            Some(("dimension", v)) => {
                dimension = Some(v.parse::<usize>().map_err(|e| format_err(e.to_string()))?)
            }
            _ => {}
        }
    }
    let fingerprint = fingerprint.ok_or_else(|| format_err("header lacks fingerprint"))?;
    let dimension = dimension.ok_or_else(|| format_err("header lacks dimension"))?;

    let mut body = String::new();
    input.read_to_string(&mut body)?;
    let mut comments = Vec::new();
    let mut data = String::new();
    for line in body.lines() {
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
        } else if !line.trim().is_empty() {
            data.push_str(line);
            data.push('\n');
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(data.as_bytes());
    let mut records = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| format_err(e.to_string()))?;
        if row.len() != dimension + 2 {
            return Err(format_err(format!(
                "record {} has {} bit fields, expected {dimension}",
                n + 1,
                row.len().saturating_sub(2)
            )));
        }
        let label: Label = row[1].parse().map_err(format_err)?;
        let bits = row
            .iter()
            .skip(2)
            .map(|b| match b {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(format_err(format!("record {}: bit {other:?} is not 0/1", n + 1))),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        records.push(VectorRecord {
            vector: FeatureVector {
                app_id: row[0].to_string(),
                bits,
                fingerprint,
            },
            label,
        });
    }
    Ok(VectorFile {
        fingerprint,
        dimension,
        comments,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(app: &str, bits: Vec<bool>, label: Label) -> VectorRecord {
        VectorRecord {
            vector: FeatureVector {
                app_id: app.into(),
                bits,
                fingerprint: Fingerprint(0xdead_beef),
            },
            label,
        }
    }

    #[test]
    fn line_format() {
        let file = VectorFile {
            fingerprint: Fingerprint(0xdead_beef),
            dimension: 3,
            comments: vec!["run {\"command\":\"synth\"}".into()],
            records: vec![sample("a.apk", vec![true, false, true], Label::Malicious)],
        };
        let mut out = Vec::new();
        write_vectors(&mut out, &file).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "# droidae-vectors v1 fingerprint=deadbeef dimension=3\n# run {\"command\":\"synth\"}\n\"a.apk\",\"malicious\",1,0,1\n"
        );
    }

    #[test]
    fn rejects_wrong_width_and_bad_bits() {
        let head = "# droidae-vectors v1 fingerprint=00000001 dimension=2\n";
        assert!(read_vectors(format!("{head}a,benign,1\n").as_bytes()).is_err());
        assert!(read_vectors(format!("{head}a,benign,1,2\n").as_bytes()).is_err());
        assert!(read_vectors(format!("{head}a,evil,1,0\n").as_bytes()).is_err());
        assert!(read_vectors("a,benign,1,0\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(
            rows in prop::collection::vec(("[ -~]{0,12}", prop::collection::vec(any::<bool>(), 5), 0..3u8), 0..8)
        ) {
            let records: Vec<VectorRecord> = rows
                .into_iter()
                .map(|(id, bits, l)| {
                    let label = [Label::Benign, Label::Malicious, Label::Unknown][l as usize];
                    sample(&id, bits, label)
                })
                .collect();
            let file = VectorFile { fingerprint: Fingerprint(0xdead_beef), dimension: 5, comments: vec![], records };
            let mut out = Vec::new();
            write_vectors(&mut out, &file).unwrap();
            prop_assert_eq!(read_vectors(out.as_slice()).unwrap(), file);
        }
    }
}
