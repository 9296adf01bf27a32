//! Append-only results ledger and float formatting for every CSV output.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Formats with 9 significant digits, printed in the shortest form that
/// reads back to the rounded value.
pub fn sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("scientific float parses");
    format!("{rounded}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub experiment_id: String,
    pub stage: String,
    pub method: String,
    pub seed: String,
    pub metric: String,
    pub value: String,
}

impl LedgerRow {
    pub fn new(experiment_id: &str, stage: &str, method: &str, seed: Option<u64>, metric: &str, value: f64) -> Self {
        Self {
            experiment_id: experiment_id.to_string(),
            stage: stage.to_string(),
            method: method.to_string(),
            seed: seed.map(|s| s.to_string()).unwrap_or_default(),
            metric: metric.to_string(),
            value: sig9(value),
        }
    }

    pub fn value_f64(&self) -> f64 {
        self.value.parse().unwrap_or(f64::NAN)
    }
}

/// CSV with columns experiment_id, stage, method, seed, metric, value.
/// Rows are only ever appended.
#[derive(Debug, Clone)]
pub struct Ledger {
    path: PathBuf,
}

impl Ledger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rows: &[LedgerRow]) -> Result<()> {
        let exists = self.path.exists() && std::fs::metadata(&self.path)?.len() > 0;
        let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn rows(&self) -> Result<Vec<LedgerRow>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let mut r = csv::Reader::from_path(&self.path)?;
        Ok(r.deserialize().collect::<std::result::Result<Vec<LedgerRow>, _>>()?)
    }

    pub fn has_stage(&self, experiment_id: &str, stage: &str) -> Result<bool> {
        Ok(self.rows()?.iter().any(|r| r.experiment_id == experiment_id && r.stage == stage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.0625), "0.0625");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(123456789.123), "123456789");
        assert_eq!(sig9(-2.0 / 3.0 * 1e-7), "-0.0000000666666667");
        assert_eq!(sig9(0.0), "0");
    }

    #[test]
    fn append_only_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::new(dir.path().join("ledger.csv"));
        ledger.append(&[LedgerRow::new("abc", "victim", "mfq", Some(0), "return", 1.5)]).unwrap();
        ledger.append(&[LedgerRow::new("abc", "attack", "greedy", None, "return", -0.25)]).unwrap();
        let rows = ledger.rows().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].value_f64(), -0.25);
        assert_eq!(rows[1].seed, "");
        assert!(ledger.has_stage("abc", "attack").unwrap());
        assert!(!ledger.has_stage("abd", "attack").unwrap());
        let text = std::fs::read_to_string(ledger.path()).unwrap();
        assert!(text.starts_with("experiment_id,stage,method,seed,metric,value\n"));
        assert_eq!(text.matches("experiment_id").count(), 1);
    }
}
