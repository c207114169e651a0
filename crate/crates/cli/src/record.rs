use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Resource totals and final metric of one network variant.
///
/// `mode` is `full` for the unpruned baseline. Prune and train reports embed
/// these fields at top level, so either file can be fed to `ranp report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: String,
    pub sparsity: f64,
    pub seed: u64,
    pub params: u64,
    pub flops: u64,
    /// Activation elements per sample.
    pub mem: u64,
    pub metric_name: Option<String>,
    pub metric: Option<f64>,
}

pub const FULL_MODE: &str = "full";

impl RunRecord {
    pub fn is_full(&self) -> bool {
        self.mode == FULL_MODE
    }
}

/// Reads run records from a JSON report (one object or an array) or from a
/// CSV comparison table written by `ranp report --format csv`.
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows = reader
            .deserialize::<RunRecord>()
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("parsing {}", path.display()))?;
        if rows.is_empty() {
            bail!("{} holds no runs", path.display());
        }
        return Ok(rows);
    }
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let runs = match value {
        serde_json::Value::Array(items) => {
            items.into_iter().map(serde_json::from_value).collect::<Result<Vec<RunRecord>, _>>()
        }
        other => serde_json::from_value(other).map(|r| vec![r]),
    };
    runs.with_context(|| format!("{} is not a run report", path.display()))
}
