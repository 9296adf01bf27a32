//! Plain-text checkpoint container: a versioned header of `key value` lines
//! followed by row-major parameter values, one per line. Values are written
//! in shortest round-trip form so a reload is bit-exact.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{Backend, MeanFieldCoder, QModel};
use crate::error::{Result, VaiError};

const MAGIC: &str = "vai-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub header: Vec<(String, String)>,
    pub values: Vec<f64>,
}

fn err(msg: impl Into<String>) -> VaiError {
    VaiError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            header: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| err(format!("missing header `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| err(format!("header `{key}` has an unreadable value")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nkind {}\n", self.kind);
        for (k, v) in &self.header {
            let _ = writeln!(out, "{k} {v}");
        }
        let _ = writeln!(out, "values {}", self.values.len());
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(err("not a vai checkpoint (bad magic line)"));
        }
        let kind = lines
            .next()
            .and_then(|l| l.strip_prefix("kind "))
            .ok_or_else(|| err("missing kind line"))?
            .to_string();
        let mut header = Vec::new();
        let count = loop {
            let line = lines.next().ok_or_else(|| err("missing values line"))?;
            let (k, v) = line.split_once(' ').ok_or_else(|| err(format!("malformed header line `{line}`")))?;
            if k == "values" {
                break v.parse::<usize>().map_err(|_| err("bad value count"))?;
            }
            header.push((k.to_string(), v.to_string()));
        };
        let values = lines
            .take(count)
            .map(|l| l.parse::<f64>().map_err(|_| err(format!("bad value `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != count {
            return Err(err(format!("expected {count} values, found {}", values.len())));
        }
        Ok(Self { kind, header, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(err(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)));
        }
        Ok(())
    }
}

pub fn q_checkpoint(q: &QModel) -> Checkpoint {
    let mut c = Checkpoint::new("q-model")
        .with("backend", q.backend().tag())
        .with("n_states", q.n_states())
        .with("n_actions", q.n_actions())
        .with("mu_levels", q.mu_coder().levels)
        .with("mu_buckets", q.mu_coder().buckets)
        .with("nu_levels", q.nu_coder().levels)
        .with("nu_buckets", q.nu_coder().buckets)
        .with("gamma", q.gamma());
    c.values = q.values().to_vec();
    c
}

pub fn q_from_checkpoint(c: &Checkpoint) -> Result<QModel> {
    c.expect_kind("q-model")?;
    QModel::from_parts(
        Backend::parse(c.get("backend")?)?,
        c.parse("n_states")?,
        c.parse("n_actions")?,
        MeanFieldCoder::new(c.parse("mu_levels")?, c.parse("mu_buckets")?)?,
        MeanFieldCoder::new(c.parse("nu_levels")?, c.parse("nu_buckets")?)?,
        c.parse("gamma")?,
        c.values.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_round_trip_is_bit_exact() {
        let mut q = QModel::new(Backend::Tabular, 3, 2, MeanFieldCoder::new(4, 5).unwrap(), MeanFieldCoder::ignore(), 0.95).unwrap();
        for (i, v) in q.values_mut().iter_mut().enumerate() {
            *v = (i as f64 + 0.1).sqrt() / 7.0 - 0.3;
        }
        let text = q_checkpoint(&q).to_text();
        let back = q_from_checkpoint(&Checkpoint::from_text(&text).unwrap()).unwrap();
        assert_eq!(q, back);
        assert!(text.starts_with("vai-checkpoint 1\nkind q-model\nbackend tabular\n"));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        assert!(Checkpoint::from_text("hello").is_err());
        let c = Checkpoint::new("q-model").with("backend", "tabular");
        let mut text = c.to_text();
        text = text.replace("values 0", "values 2\n1.0");
        assert!(Checkpoint::from_text(&text).is_err());
        assert!(q_from_checkpoint(&Checkpoint::new("robust-value")).is_err());
    }
}
