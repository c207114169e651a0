use anyhow::{bail, Result};
use serde::Serialize;

use crate::record::RunRecord;
use crate::table::render;

/// A run with its reductions against the full baseline, in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub run: RunRecord,
    pub params_red_pct: f64,
    pub flops_red_pct: f64,
    pub mem_red_pct: f64,
    pub metric_red_pct: Option<f64>,
}

fn reduction(x: f64, full: f64) -> f64 {
    if full == 0.0 {
        0.0
    } else {
        100.0 * (1.0 - x / full)
    }
}

/// One row per run, compared with the first `full` run.
pub fn build(runs: &[RunRecord]) -> Result<Vec<ReportRow>> {
    let Some(full) = runs.iter().find(|r| r.is_full()) else {
        bail!("no full-network baseline among the runs; add a run with mode `full`");
    };
    Ok(runs
        .iter()
        .map(|r| ReportRow {
            run: r.clone(),
            params_red_pct: reduction(r.params as f64, full.params as f64),
            flops_red_pct: reduction(r.flops as f64, full.flops as f64),
            mem_red_pct: reduction(r.mem as f64, full.mem as f64),
            metric_red_pct: r.metric.zip(full.metric).map(|(m, f)| reduction(m, f)),
        })
        .collect())
}

const COLUMNS: [&str; 12] = [
    "mode",
    "sparsity",
    "seed",
    "params",
    "params_red_pct",
    "flops",
    "flops_red_pct",
    "mem",
    "mem_red_pct",
    "metric_name",
    "metric",
    "metric_red_pct",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns follow [`RunRecord`] field names, so the output reads back with
/// [`crate::record::read_runs`].
pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record([
            r.run.mode.clone(),
            r.run.sparsity.to_string(),
            r.run.seed.to_string(),
            r.run.params.to_string(),
            r.params_red_pct.to_string(),
            r.run.flops.to_string(),
            r.flops_red_pct.to_string(),
            r.run.mem.to_string(),
            r.mem_red_pct.to_string(),
            r.run.metric_name.clone().unwrap_or_default(),
            opt(r.run.metric),
            opt(r.metric_red_pct),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn to_table(rows: &[ReportRow]) -> String {
    let pct = |v: f64| format!("{v:.2}%");
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.run.mode.clone(),
                format!("{:.2}%", 100.0 * r.run.sparsity),
                r.run.seed.to_string(),
                r.run.params.to_string(),
                pct(r.params_red_pct),
                r.run.flops.to_string(),
                pct(r.flops_red_pct),
                r.run.mem.to_string(),
                pct(r.mem_red_pct),
                match (&r.run.metric_name, r.run.metric) {
                    (Some(n), Some(m)) => format!("{n} {m:.4}"),
                    _ => "-".into(),
                },
                r.metric_red_pct.map_or("-".into(), pct),
            ]
        })
        .collect();
    render(
        &["mode", "sparsity", "seed", "params", "-params", "flops", "-flops", "mem", "-mem", "metric", "-metric"],
        &body,
    )
}
