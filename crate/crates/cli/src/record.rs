use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::Result;

/// A named scalar output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub label: String,
    pub value: f64,
}

/// Rows of numbers under named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Something the study skipped, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Omission {
    pub what: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub git_revision: Option<String>,
    pub config_hash: String,
    pub version: String,
    pub threads: usize,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub study: String,
    pub parameters: serde_json::Value,
    pub metrics: Vec<Metric>,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub omissions: Vec<Omission>,
    pub provenance: Provenance,
    /// Field dumps; written as CSV only.
    #[serde(skip)]
    pub exports: Vec<Table>,
    /// Extra documents as `(file name, contents)`.
    #[serde(skip)]
    pub files: Vec<(String, String)>,
}

/// Hex SHA-256 of the canonical JSON form of `config`.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let text = serde_json::to_string(config)?;
    Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
}

fn git_revision() -> Option<String> {
    let out = Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

impl ResultRecord {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            study: config.study.name().to_string(),
            parameters: serde_json::to_value(config)?,
            metrics: Vec::new(),
            tables: Vec::new(),
            checks: Vec::new(),
            omissions: Vec::new(),
            exports: Vec::new(),
            files: Vec::new(),
            provenance: Provenance {
                git_revision: git_revision(),
                config_hash: config_hash(config)?,
                version: env!("CARGO_PKG_VERSION").to_string(),
                threads: rayon::current_num_threads(),
                runtime_seconds: 0.0,
            },
        })
    }

    pub fn metric(&mut self, label: &str, value: f64) {
        self.metrics.push(Metric { label: label.into(), value });
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.label == label).map(|m| m.value)
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn omit(&mut self, what: impl Into<String>, reason: impl Into<String>) {
        self.omissions.push(Omission { what: what.into(), reason: reason.into() });
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Writes `<study>.json`, one `<study>_<table>.csv` per table and the
/// attached files.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{}.json", self.study));
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        let mut out = vec![json];
        for t in self.tables.iter().chain(&self.exports) {
            let p = dir.join(format!("{}_{}.csv", self.study, t.name));
            t.write_csv(&p)?;
            out.push(p);
        }
        for (name, body) in &self.files {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            out.push(p);
        }
        Ok(out)
    }
}
