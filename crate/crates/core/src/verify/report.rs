use std::fmt;

use crate::error::{Error, Result};

/// Outcome of one probe, printable as a single `key=value` line.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub name: String,
    pub passed: bool,
    pub seed: u64,
    pub tolerance: f64,
    pub metrics: Vec<(String, String)>,
}

impl ProbeReport {
    pub fn new(name: impl Into<String>, seed: u64, tolerance: f64) -> Self {
        ProbeReport {
            name: name.into(),
            passed: false,
            seed,
            tolerance,
            metrics: Vec::new(),
        }
    }

    pub fn metric(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.metrics.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn with_status(mut self, passed: bool) -> Self {
        self.passed = passed;
        self
    }

    /// Parses a line produced by the `Display` impl.
    pub fn from_line(line: &str) -> Result<Self> {
        let bad = || Error::Input(format!("not a probe record: `{line}`"));
        let mut name = None;
        let mut passed = None;
        let mut seed = None;
        let mut tolerance = None;
        let mut metrics = Vec::new();
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "probe" => name = Some(v.to_string()),
                "status" => passed = Some(v == "pass"),
                "seed" => seed = v.parse().ok(),
                "tol" => tolerance = v.parse().ok(),
                _ => metrics.push((k.to_string(), v.to_string())),
            }
        }
        Ok(ProbeReport {
            name: name.ok_or_else(bad)?,
            passed: passed.ok_or_else(bad)?,
            seed: seed.ok_or_else(bad)?,
            tolerance: tolerance.ok_or_else(bad)?,
            metrics,
        })
    }
}

impl fmt::Display for ProbeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "probe={} status={} seed={} tol={:e}",
            self.name,
            if self.passed { "pass" } else { "fail" },
            self.seed,
            self.tolerance
        )?;
        for (k, v) in &self.metrics {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}
