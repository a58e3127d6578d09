//! JSONL ingestion and canonical serialization.
//!
//! The canonical form is one compact JSON object per line in struct field
//! order, `\n`-terminated, so `save(load(file))` reproduces a canonical file
//! byte for byte.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CorpusError, PreferenceExample, Result};

pub fn to_jsonl_line(example: &PreferenceExample) -> String {
    serde_json::to_string(example).expect("preference examples always serialize")
}

/// Parses one record. `line` is 1-based and only used for error context.
pub fn from_jsonl_line(text: &str, line: usize) -> Result<PreferenceExample> {
    serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line,
        message: e.to_string(),
    })
}

/// Reads and validates a corpus. Blank lines are skipped but still counted.
pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<PreferenceExample>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    let mut dim = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let ex = from_jsonl_line(&text, line_no)?;
        dim = dim.or_else(|| ex.feature_dim());
        ex.validate(dim).map_err(|e| match e {
            CorpusError::Invalid { id, field, reason } => CorpusError::InvalidAtLine {
                line: line_no,
                id,
                field,
                reason,
            },
            other => other,
        })?;
        if !ids.insert(ex.id.clone()) {
            return Err(CorpusError::InvalidAtLine {
                line: line_no,
                id: ex.id,
                field: "id",
                reason: "duplicate id".into(),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut writer: W, examples: &[PreferenceExample]) -> std::io::Result<()> {
    for ex in examples {
        writer.write_all(to_jsonl_line(ex).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<PreferenceExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(file)
}

pub fn save_corpus(path: impl AsRef<Path>, examples: &[PreferenceExample]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(BufWriter::new(file), examples).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, CorpusSpec, LabelRule};

    fn corpus() -> Vec<PreferenceExample> {
        let mut spec = CorpusSpec::new(3, 4, LabelRule::RandomLinear { rule_seed: 1 }, 2);
        spec.with_rationales = true;
        synth_corpus(&spec).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = corpus();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &c).unwrap();
        let back = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let mut again = Vec::new();
        write_corpus(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_label_cites_line() {
        let mut c = corpus();
        c[1].label = crate::corpus::Label::A;
        let lines: Vec<String> = c
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let l = to_jsonl_line(ex);
                if i == 1 {
                    l.replace("\"label\":\"A\"", "\"label\":\"C\"")
                } else {
                    l
                }
            })
            .collect();
        let text = lines.join("\n");
        let err = read_corpus(text.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn invariant_violation_names_id_and_field() {
        let mut c = corpus();
        c[1].media[0].feature_bits = "1".parse().unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &c).unwrap();
        let err = read_corpus(buf.as_slice()).unwrap_err();
        match err {
            CorpusError::InvalidAtLine { line, id, field, .. } => {
                assert_eq!((line, id.as_str(), field), (2, c[1].id.as_str(), "feature_bits"));
            }
            other => panic!("{other}"),
        }
    }
}
