//! Inputs of a run: space and isometry documents, experiment configs and
//! their parameters.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hornlab::isometry::Isometry;
use hornlab::{CompletionPoint, SpaceSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Bad flags, unreadable or invalid configuration: exit code 3.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Reads a JSON document given either inline (starting with `{`) or as a
/// file path.
pub fn read_json_arg(arg: &str) -> Result<String> {
    if arg.trim_start().starts_with('{') {
        return Ok(arg.to_string());
    }
    fs::read_to_string(arg).map_err(|e| UsageError(format!("cannot read {arg}: {e}")).into())
}

pub fn load_space(arg: &str) -> Result<SpaceSpec> {
    SpaceSpec::from_json(&read_json_arg(arg)?).map_err(|e| UsageError(format!("space {arg}: {e}")).into())
}

pub fn load_iso(arg: &str, space: &SpaceSpec) -> Result<Isometry<f64>> {
    let iso = Isometry::from_json(&read_json_arg(arg)?).map_err(|e| UsageError(format!("isometry {arg}: {e}")))?;
    iso.validate(space).map_err(|e| UsageError(format!("isometry {arg}: {e}")))?;
    Ok(iso)
}

pub fn load_point(arg: &str, space: &SpaceSpec) -> Result<CompletionPoint> {
    let p = CompletionPoint::from_json(&read_json_arg(arg)?).map_err(|e| UsageError(format!("point {arg}: {e}")))?;
    p.validated(space).map_err(|e| UsageError(format!("point {arg}: {e}")).into())
}

pub const EXPERIMENTS: [&str; 7] = ["interior", "corners", "table1", "diverge", "proper", "masur", "expansion"];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub space: Option<SpaceSpec>,
    #[serde(default)]
    pub parameters: Value,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(|e| UsageError(format!("{e:#}")))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

/// Typed parameters with defaults; unknown keys are rejected.
pub fn parameters<P: DeserializeOwned + Default>(v: &Value) -> Result<P> {
    match v {
        Value::Null => Ok(P::default()),
        _ => serde_json::from_value(v.clone()).map_err(|e| UsageError(format!("parameters: {e}")).into()),
    }
}
