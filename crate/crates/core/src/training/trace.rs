use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// CSV header of a trace file.
pub const TRACE_COLUMNS: [&str; 8] = [
    "iter",
    "surrogate_loss",
    "meta_loss",
    "true_train_loss",
    "true_test_loss",
    "wall_ms",
    "alpha_steps",
    "beta_steps",
];

/// One evaluation point. Loss columns average the iterations since the
/// previous record; missing values are written as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub surrogate_loss: Option<f64>,
    pub meta_loss: Option<f64>,
    pub true_train_loss: Option<f64>,
    pub true_test_loss: Option<f64>,
    pub wall_ms: u64,
    pub alpha_steps: u64,
    pub beta_steps: u64,
}

/// Cumulative work done by a trainer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    pub alpha_steps: u64,
    pub beta_steps: u64,
    /// Scalar parameter gradients computed, over both networks.
    pub param_gradients: u64,
    /// Phase-isolation checks performed (audit runs only).
    pub isolation_checks: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Mean surrogate (or baseline) loss of each outer iteration.
    pub surrogate_history: Vec<f64>,
    /// Mean meta-loss of each outer iteration with surrogate updates.
    pub meta_history: Vec<f64>,
    pub counters: StepCounters,
}

fn cell(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v:?}");
    }
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = TRACE_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},", r.iteration);
            cell(&mut out, r.surrogate_loss);
            out.push(',');
            cell(&mut out, r.meta_loss);
            out.push(',');
            cell(&mut out, r.true_train_loss);
            out.push(',');
            cell(&mut out, r.true_test_loss);
            let _ = writeln!(out, ",{},{},{}", r.wall_ms, r.alpha_steps, r.beta_steps);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Drops the wall-clock column from trace CSV text, leaving only the
/// columns that are a deterministic function of config and seed.
pub fn strip_wall_clock(csv: &str) -> String {
    let idx = TRACE_COLUMNS.iter().position(|&c| c == "wall_ms").unwrap();
    csv.lines()
        .map(|line| {
            line.split(',')
                .enumerate()
                .filter(|&(i, _)| i != idx)
                .map(|(_, c)| c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
