//! Prediction files: a JSON header line followed by one record per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::PredictionRecord;
use crate::{Error, Result};

pub const PREDICTIONS_FORMAT: &str = "fairgen-predictions";
pub const PREDICTIONS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    classifier: String,
    vocab_hash: String,
    records: u64,
}

pub fn write_predictions<W: Write>(
    mut w: W,
    classifier: &str,
    vocab_hash: &str,
    records: &[PredictionRecord],
) -> std::io::Result<()> {
    let header = Header {
        format: PREDICTIONS_FORMAT.into(),
        version: PREDICTIONS_VERSION,
        classifier: classifier.into(),
        vocab_hash: vocab_hash.into(),
        records: records.len() as u64,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Returns (classifier name, vocab hash, records).
pub fn read_predictions<R: BufRead>(reader: R) -> Result<(String, String, Vec<PredictionRecord>)> {
    let mut lines = reader.lines();
    let bad = |d: String| Error::format("predictions", d);
    let header: Header = match lines.next() {
        Some(Ok(l)) => serde_json::from_str(&l).map_err(|e| bad(format!("header: {e}")))?,
        Some(Err(e)) => return Err(bad(e.to_string())),
        None => return Err(bad("empty file".into())),
    };
    if header.format != PREDICTIONS_FORMAT {
        return Err(bad(format!("unexpected format {:?}", header.format)));
    }
    if header.version != PREDICTIONS_VERSION {
        return Err(Error::Compatibility(format!(
            "predictions format version {}",
            header.version
        )));
    }
    let mut records = Vec::with_capacity(header.records as usize);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        let r: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(bad(format!(
                "line {}: score {} outside [0, 1]",
                i + 2,
                r.score
            )));
        }
        records.push(r);
    }
    if records.len() as u64 != header.records {
        return Err(bad(format!(
            "header announces {} records, found {}",
            header.records,
            records.len()
        )));
    }
    Ok((header.classifier, header.vocab_hash, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let recs = vec![
            PredictionRecord {
                sample_id: "00000000".into(),
                predicted_label: "melanoma".into(),
                score: 0.9,
            },
            PredictionRecord {
                sample_id: "00000001".into(),
                predicted_label: "other".into(),
                score: 1.0,
            },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, "m", "abc", &recs).unwrap();
        let (name, hash, back) = read_predictions(&buf[..]).unwrap();
        assert_eq!((name.as_str(), hash.as_str()), ("m", "abc"));
        assert_eq!(back, recs);
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(read_predictions(cut.as_bytes()).is_err());
    }
}
