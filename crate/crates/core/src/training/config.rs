use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::metrics::MetricId;

/// How the surrogate is obtained and whether it keeps learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurrogateMode {
    /// Pretrained on random batches, then frozen while the predictor trains.
    #[serde(rename = "SL-U")]
    Universal,
    /// Randomly initialized and learned jointly with the predictor.
    #[serde(rename = "SL-S")]
    Scratch,
    /// Pretrained, then refined jointly with the predictor.
    #[serde(rename = "SL-R")]
    Refined,
}

impl SurrogateMode {
    pub const ALL: [SurrogateMode; 3] = [Self::Universal, Self::Scratch, Self::Refined];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Universal => "SL-U",
            Self::Scratch => "SL-S",
            Self::Refined => "SL-R",
        }
    }

    pub fn pretrains(&self) -> bool {
        !matches!(self, Self::Scratch)
    }
}

impl fmt::Display for SurrogateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SurrogateMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrainError::Config(format!("unknown surrogate mode {s:?}")))
    }
}

/// Differentiable single-level baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    /// Mean binary cross-entropy on `sigmoid(score)`.
    #[serde(rename = "CE")]
    CrossEntropy,
    /// Mean pairwise hinge `max(0, 1 - (s_pos - s_neg))` over in-batch pairs.
    #[serde(rename = "PR")]
    PairwiseRanking,
    /// Cross-entropy with the positive-class term weighted.
    #[serde(rename = "CS")]
    CostSensitive { positive_weight: f64 },
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CrossEntropy => "CE",
            Self::PairwiseRanking => "PR",
            Self::CostSensitive { .. } => "CS",
        }
    }
}

/// Positive-class weights tried when tuning the cost-sensitive baseline.
pub const COST_SENSITIVE_GRID: [f64; 6] = [0.3, 0.9, 2.7, 8.1, 24.3, 72.9];

/// Alternating bilevel training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Outer iterations `T`.
    pub iterations: u64,
    /// Predictor updates per outer iteration.
    pub k_alpha: u32,
    /// Surrogate updates per outer iteration; 0 freezes the surrogate.
    pub k_beta: u32,
    pub eta_alpha: f64,
    pub eta_beta: f64,
    pub batch_size: usize,
    /// Global L2 bound applied to each network's gradient every step.
    pub clip_norm: f64,
    pub metric: MetricId,
    /// Score threshold used for thresholded metrics during training.
    pub gamma: f64,
    /// Outer iterations between full-split evaluations in the trace.
    pub eval_every: u64,
    /// Verify after every phase that the other network was left untouched.
    pub audit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            k_alpha: 3,
            k_beta: 10,
            eta_alpha: 1e-5,
            eta_beta: 1e-5,
            batch_size: 100,
            clip_norm: 1e-5,
            metric: MetricId::Mcr,
            gamma: 0.0,
            eval_every: 500,
            audit: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.k_alpha < 1 {
            return bad("k_alpha must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} is below 2", self.batch_size));
        }
        if !(self.eta_alpha > 0.0 && self.eta_beta > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if !self.gamma.is_finite() {
            return bad("gamma must be finite".into());
        }
        Ok(())
    }
}

/// Surrogate pretraining on random label/score batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Probability of a positive label.
    pub p: f64,
    pub mu: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 100,
            p: 0.5,
            mu: 0.0,
            sigma: 1.0,
            learning_rate: 1e-3,
            clip_norm: 1e-5,
        }
    }
}
