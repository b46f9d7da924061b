//! JSONL prediction dumps: one `{"id", "logits", "label"?}` object per line.
//!
//! Labels in dumps are one-based; everything inside the engine is zero-based.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::representation::LogitVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, logits: Vec<f64>, gold: Option<usize>) -> Self {
        PredictionRecord {
            id: id.into(),
            logits,
            label: gold.map(|g| g + 1),
        }
    }

    pub fn logit_vector(&self) -> Result<LogitVector> {
        LogitVector::new(self.logits.clone())
    }

    /// Zero-based gold label.
    pub fn gold(&self) -> Option<usize> {
        self.label.map(|l| l - 1)
    }
}

/// Parses a dump. All records must have the same number of logits; errors
/// name the offending (one-based) line. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    let mut width = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::InvalidInput(format!("line {lineno}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::InvalidInput(format!("line {lineno}: {e}")))?;
        let n = rec.logits.len();
        if n < 2 {
            return Err(Error::InvalidShape(format!(
                "line {lineno}: need at least 2 logits, got {n}"
            )));
        }
        if rec.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("line {lineno}: non-finite logit")));
        }
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(Error::InvalidShape(format!(
                    "line {lineno}: {n} logits, earlier records have {w}"
                )))
            }
            _ => {}
        }
        if let Some(label) = rec.label {
            if label < 1 || label > n {
                return Err(Error::InvalidInput(format!(
                    "line {lineno}: label {label} outside 1..={n}"
                )));
            }
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[PredictionRecord]) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_writes() {
        let text = "{\"id\":\"a\",\"logits\":[0.5,-1.25],\"label\":2}\n\n{\"id\":\"b\",\"logits\":[1,2]}\n";
        let recs = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].gold(), Some(1));
        assert_eq!(recs[1].label, None);
        let mut out = Vec::new();
        write_jsonl(&mut out, &recs).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "{\"id\":\"a\",\"logits\":[0.5,-1.25],\"label\":2}\n{\"id\":\"b\",\"logits\":[1.0,2.0]}\n"
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "{\"id\":\"a\",\"logits\":[0,1]}\n{\"id\":\"b\",\"logits\":[0,1\n";
        let err = read_jsonl(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        let text = "{\"id\":\"a\",\"logits\":[0,1]}\n{\"id\":\"b\",\"logits\":[0,1,2]}\n";
        assert!(read_jsonl(text.as_bytes()).unwrap_err().to_string().contains("line 2"));

        let text = "{\"id\":\"a\",\"logits\":[0,1],\"label\":3}\n";
        assert!(read_jsonl(text.as_bytes()).unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn gold_round_trips_through_one_based_labels() {
        let r = PredictionRecord::new("x", vec![0.0, 1.0], Some(0));
        assert_eq!(r.label, Some(1));
        assert_eq!(r.gold(), Some(0));
    }
}
