//! Report records and the in-memory artifact set written at the end of a run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;

pub const REPORT_SCHEMA: &str = "smoothlab-report/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    /// Residual, gap or margin, whichever the check compares against its tolerance.
    pub residual: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
    #[serde(default)]
    pub note: Option<String>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl Check {
    pub fn new(name: &str, lhs: f64, rhs: f64, residual: f64, tolerance: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            lhs: finite(lhs),
            rhs: finite(rhs),
            residual: finite(residual),
            tolerance: finite(tolerance),
            pass,
            note: None,
        }
    }

    pub fn flag(name: &str, pass: bool, note: impl Into<String>) -> Self {
        Self { name: name.into(), lhs: None, rhs: None, residual: None, tolerance: None, pass, note: Some(note.into()) }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Build and platform facts that can affect floating-point results. No clocks or hostnames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub package: String,
    pub version: String,
    pub target_arch: String,
    pub target_os: String,
    pub debug_assertions: bool,
}

impl Fingerprint {
    pub fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            target_arch: std::env::consts::ARCH.into(),
            target_os: std::env::consts::OS.into(),
            debug_assertions: cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema: String,
    pub verb: String,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub tolerance_scale: f64,
    pub checks: Vec<Check>,
    pub all_pass: bool,
    /// Verb-specific summary values.
    pub data: serde_json::Value,
    pub environment: Fingerprint,
}

/// Wall-clock facts, kept out of the report so that reports compare byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub started_unix_seconds: u64,
    pub wall_time_seconds: f64,
    pub threads: usize,
}

/// Named output files, rendered in memory and written together.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    /// CSV with a header row; floats use the shortest round-trip form.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for row in rows {
            w.write_record(row.iter().map(|x| x.to_string())).expect("in-memory write");
        }
        self.files.insert(format!("{name}.csv"), w.into_inner().expect("in-memory flush"));
    }

    /// Two whitespace-separated columns for plotting tools.
    pub fn dat(&mut self, name: &str, comment: &str, rows: impl IntoIterator<Item = (f64, f64)>) {
        let mut s = format!("# {comment}\n");
        for (x, y) in rows {
            s.push_str(&format!("{x} {y}\n"));
        }
        self.files.insert(format!("{name}.dat"), s.into_bytes());
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        self.files.insert(name.into(), bytes);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn write_all(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}
