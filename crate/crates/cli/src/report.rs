//! Run reports: assertions with their expected values, written as
//! `report.json` next to the CSV artifacts of a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "hornlab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub expected: Value,
    pub measured: Value,
    pub tolerance: Option<f64>,
    pub passed: bool,
    /// Where the expected value comes from.
    pub oracle: String,
    /// The check could not be decided (solver failure, inconclusive search).
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub inconclusive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub status: Status,
    pub summary: String,
    pub assertions: Vec<Assertion>,
    pub data: BTreeMap<String, Value>,
    pub artifacts: Vec<String>,
}

/// sha256 of the canonical JSON form of a configuration.
pub fn config_hash(config: &Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json values serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Report {
    pub fn new(command: &str, config: &Value, seed: u64) -> Self {
        Report {
            tool: TOOL,
            version: VERSION,
            command: command.to_string(),
            config_hash: config_hash(config),
            seed,
            tolerances: BTreeMap::new(),
            status: Status::Pass,
            summary: String::new(),
            assertions: Vec::new(),
            data: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn tolerance(&mut self, name: &str, value: f64) -> &mut Self {
        self.tolerances.insert(name.to_string(), value);
        self
    }

    pub fn datum(&mut self, key: &str, value: impl Serialize) {
        self.data.insert(key.to_string(), serde_json::to_value(value).expect("serializable datum"));
    }

    /// `|measured − expected| ≤ tol`.
    pub fn close(&mut self, name: &str, expected: f64, measured: f64, tol: f64, oracle: &str) -> bool {
        let passed = (measured - expected).abs() <= tol;
        self.push(name, expected.into(), measured.into(), Some(tol), passed, oracle);
        passed
    }

    /// `measured ≤ bound`.
    pub fn at_most(&mut self, name: &str, bound: f64, measured: f64, oracle: &str) -> bool {
        let passed = measured <= bound;
        self.push(name, Value::String(format!("<= {bound:e}")), measured.into(), Some(bound), passed, oracle);
        passed
    }

    /// `measured ≥ bound`.
    pub fn at_least(&mut self, name: &str, bound: f64, measured: f64, oracle: &str) -> bool {
        let passed = measured >= bound;
        self.push(name, Value::String(format!(">= {bound:e}")), measured.into(), None, passed, oracle);
        passed
    }

    pub fn holds(&mut self, name: &str, measured: bool, oracle: &str) -> bool {
        self.push(name, true.into(), measured.into(), None, measured, oracle);
        measured
    }

    pub fn equals(&mut self, name: &str, expected: &str, measured: &str, oracle: &str) -> bool {
        let passed = expected == measured;
        self.push(name, expected.into(), measured.into(), None, passed, oracle);
        passed
    }

    pub fn undecided(&mut self, name: &str, why: &str) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            expected: Value::Null,
            measured: Value::String(why.to_string()),
            tolerance: None,
            passed: false,
            oracle: String::new(),
            inconclusive: true,
        });
    }

    fn push(&mut self, name: &str, expected: Value, measured: Value, tolerance: Option<f64>, passed: bool, oracle: &str) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            expected,
            measured,
            tolerance,
            passed,
            oracle: oracle.to_string(),
            inconclusive: false,
        });
    }

    /// Sets the overall status: any failed assertion fails the run, otherwise
    /// any undecided one makes it inconclusive.
    pub fn finish(&mut self) -> Status {
        self.status = if self.assertions.iter().any(|a| !a.passed && !a.inconclusive) {
            Status::Fail
        } else if self.assertions.iter().any(|a| a.inconclusive) {
            Status::Inconclusive
        } else {
            Status::Pass
        };
        let failed: Vec<&str> = self.assertions.iter().filter(|a| !a.passed).map(|a| a.name.as_str()).collect();
        self.summary = match self.status {
            Status::Pass => format!("{} assertions consistent within tolerance", self.assertions.len()),
            _ => format!("not consistent within tolerance: {}", failed.join(", ")),
        };
        self.status
    }

    pub fn passed(&self, name: &str) -> Option<bool> {
        self.assertions.iter().find(|a| a.name == name).map(|a| a.passed)
    }
}

/// Output directory of a run; artifacts are recorded relative to it.
pub struct RunDir {
    pub root: Option<PathBuf>,
}

impl RunDir {
    pub fn new(root: Option<&Path>) -> Result<Self> {
        if let Some(r) = root {
            fs::create_dir_all(r).with_context(|| format!("creating {}", r.display()))?;
        }
        Ok(RunDir { root: root.map(Path::to_path_buf) })
    }

    /// Writes an artifact produced by `fill` when the run has a directory.
    pub fn artifact(&self, report: &mut Report, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        if let Some(root) = &self.root {
            let mut buf = Vec::new();
            fill(&mut buf)?;
            fs::write(root.join(name), buf).with_context(|| format!("writing {name}"))?;
            report.artifacts.push(name.to_string());
        }
        Ok(())
    }

    /// Writes `report.json` and `timing.json`. Runtime stays out of the report
    /// so identical runs produce identical reports.
    pub fn finish(&self, report: &Report, elapsed: Duration) -> Result<()> {
        if let Some(root) = &self.root {
            let mut json = serde_json::to_string_pretty(report)?;
            json.push('\n');
            fs::write(root.join("report.json"), json)?;
            let timing = serde_json::json!({ "command": report.command, "runtime_s": elapsed.as_secs_f64() });
            fs::write(root.join("timing.json"), format!("{}\n", serde_json::to_string_pretty(&timing)?))?;
        }
        Ok(())
    }
}

/// CSV writer with '\n' line endings.
pub fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_assertions() {
        let mut r = Report::new("t", &serde_json::json!({"a": 1}), 0);
        r.close("x", 1.0, 1.0 + 1e-9, 1e-6, "identity");
        assert_eq!(r.finish(), Status::Pass);
        r.undecided("y", "budget exhausted");
        assert_eq!(r.finish(), Status::Inconclusive);
        r.at_most("z", 1.0, 2.0, "bound");
        assert_eq!(r.finish(), Status::Fail);
        assert_eq!(r.config_hash.len(), 64);
    }
}
