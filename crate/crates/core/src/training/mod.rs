//! Alternating bilevel training of a predictor against a learned surrogate
//! loss, surrogate pretraining on random batches, and differentiable
//! single-level baselines.

mod baseline;
mod bilevel;
mod config;
mod pretrain;
mod trace;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::data::{DataError, Dataset};
use crate::metrics::{self, MetricError, MetricId};
use crate::nets::{NetError, ScoreModel};

pub use baseline::train_baseline;
pub use bilevel::train_bilevel;
pub use config::{Baseline, PretrainConfig, SurrogateMode, TrainConfig, COST_SENSITIVE_GRID};
pub use pretrain::{pretrain_universal, surrogate_gap, GapReport, PretrainReport};
pub use trace::{strip_wall_clock, StepCounters, Trace, TraceRecord, TRACE_COLUMNS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite {quantity} at iteration {iteration}")]
    NonFinite {
        iteration: u64,
        quantity: &'static str,
        /// Everything recorded up to the failure.
        trace: Box<Trace>,
    },
    #[error("{network} parameters changed during the {phase} phase of iteration {iteration}")]
    PhaseIsolation {
        iteration: u64,
        phase: &'static str,
        network: &'static str,
    },
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Net(e.into())
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Data seen by a trainer. Only `train` is sampled; `test` is evaluated at
/// trace points when present.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

/// `|surrogate - true_value|` on the tape. Only the surrogate side carries
/// gradient; the subgradient at equality is 0.
pub fn meta_loss(tape: &mut Tape, true_value: f64, surrogate: Var) -> Result<Var> {
    if !true_value.is_finite() {
        return Err(TrainError::Config(format!("true loss {true_value} is not finite")));
    }
    Ok(tape.abs_diff_const(surrogate, true_value)?)
}

const EVAL_CHUNK: usize = 4096;

/// Eval-mode scores for every row of `ds`, in row order.
pub fn predict_scores<M: ScoreModel>(model: &mut M, ds: &Dataset) -> Result<Vec<f64>> {
    let n = ds.len();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        out.extend(model.predict(&ds.features().select_rows(&idx))?);
        start = end;
    }
    Ok(out)
}

/// True loss of the model's eval-mode scores on a whole split.
pub fn evaluate<M: ScoreModel>(model: &mut M, ds: &Dataset, metric: MetricId, gamma: f64) -> Result<f64> {
    let scores = predict_scores(model, ds)?;
    Ok(metrics::true_loss(metric, ds.targets(), &scores, gamma)?)
}

#[cfg(test)]
mod tests;
