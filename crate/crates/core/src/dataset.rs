//! Supervised samples `(t, x, V, λ)` and their line-delimited JSON files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HjbError, Result};

/// Generator that produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    March,
    Warm,
    Backward,
}

/// One record: value `v = V(t, x)` and costate `lambda = V_x(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: f64,
    pub lambda: Vec<f64>,
    pub src: Source,
}

impl Sample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.v.is_finite()
            && self.x.iter().chain(&self.lambda).all(|v| v.is_finite())
    }
}

pub fn to_jsonl(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| HjbError::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_is_exact() {
        let samples = vec![
            Sample { t: 0.1, x: vec![1.0 / 3.0, -2e-300], v: 0.5, lambda: vec![f64::MIN_POSITIVE, 7.0], src: Source::March },
            Sample { t: 19.75, x: vec![0.0, 1.0], v: 3.25, lambda: vec![-0.0, 1e300], src: Source::Backward },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_jsonl(&path, &samples).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), samples);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, to_jsonl(&samples).unwrap());
        assert!(text.lines().next().unwrap().contains("\"src\":\"march\""));
    }

    #[test]
    fn bad_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"t\":0}\n").unwrap();
        match read_jsonl(&path) {
            Err(HjbError::Parse(msg)) => assert!(msg.contains(":1:")),
            other => panic!("{other:?}"),
        }
    }
}
