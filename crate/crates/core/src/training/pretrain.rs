use serde::{Deserialize, Serialize};

use super::{meta_loss, PretrainConfig, Result, TrainError};
use crate::autodiff::{Tape, Tensor};
use crate::data::synth_universal_batch;
use crate::metrics::{true_loss, MetricError, MetricId};
use crate::nets::{clip_gradients, AdamConfig, AdamState, NetError, SurrogateNet};
use crate::SeededRng;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: u64,
    /// Batches redrawn because the metric was undefined on them.
    pub resampled: u64,
    /// Meta-loss of every step.
    pub history: Vec<f64>,
}

/// Draws random batches until the metric is defined on one.
fn labelled_batch(
    metric: MetricId,
    config: &PretrainConfig,
    rng: &mut SeededRng,
    resampled: &mut u64,
) -> Result<(Vec<bool>, Vec<f64>, f64)> {
    loop {
        let (y, s) = synth_universal_batch(config.batch_size, config.p, config.mu, config.sigma, rng)?;
        match true_loss(metric, &y, &s, 0.0) {
            Ok(truth) => return Ok((y, s, truth)),
            Err(MetricError::SingleClass(_)) => *resampled += 1,
            Err(e) => return Err(e.into()),
        }
    }
}

/// Fits the surrogate to the true loss on batches with Bernoulli(`p`)
/// labels and N(`mu`, `sigma^2`) scores by minimizing the mean absolute
/// gap with Adam. Thresholded metrics use threshold 0.
pub fn pretrain_universal(
    surrogate: &mut SurrogateNet,
    metric: MetricId,
    config: &PretrainConfig,
    rng: &mut SeededRng,
) -> Result<PretrainReport> {
    if config.batch_size == 0 || !(config.learning_rate > 0.0) || !(config.clip_norm > 0.0) {
        return Err(TrainError::Config(format!("invalid pretraining config {config:?}")));
    }
    let mut adam = AdamState::new(surrogate.params(), AdamConfig::with_learning_rate(config.learning_rate));
    let mut report = PretrainReport::default();
    let mut tape = Tape::new();
    for step in 1..=config.steps {
        let (y, s, truth) = labelled_batch(metric, config, rng, &mut report.resampled)?;
        tape.clear();
        let vars = surrogate.params().bind(&mut tape);
        let sv = tape.constant(Tensor::vector(s));
        let estimate = surrogate.forward(&mut tape, &vars, &y, sv)?;
        let meta = meta_loss(&mut tape, truth, estimate)?;
        let value = tape.value(meta).item();
        if !value.is_finite() {
            return Err(TrainError::Config(format!("pretraining diverged at step {step}")));
        }
        tape.backward(meta)?;
        let mut grads = surrogate.params().gradients(&tape, &vars);
        clip_gradients(&mut grads, config.clip_norm);
        adam.step(surrogate.params_mut(), &grads).map_err(|e| match e {
            NetError::NonFiniteGradient(_) => {
                TrainError::Config(format!("pretraining diverged at step {step}"))
            }
            other => other.into(),
        })?;
        report.steps += 1;
        report.history.push(value);
    }
    Ok(report)
}

/// Surrogate accuracy on fresh random batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Mean `|true - surrogate|`.
    pub mean_gap: f64,
    /// Mean `|true - c|` for the best constant `c`, the median true loss.
    pub constant_gap: f64,
    pub batches: usize,
}

/// Measures the surrogate on `batches` fresh batches drawn like the
/// pretraining data.
pub fn surrogate_gap(
    surrogate: &SurrogateNet,
    metric: MetricId,
    config: &PretrainConfig,
    batches: usize,
    rng: &mut SeededRng,
) -> Result<GapReport> {
    let mut resampled = 0;
    let mut truths = Vec::with_capacity(batches);
    let mut gaps = Vec::with_capacity(batches);
    for _ in 0..batches {
        let (y, s, truth) = labelled_batch(metric, config, rng, &mut resampled)?;
        gaps.push((surrogate.evaluate(&y, &s)? - truth).abs());
        truths.push(truth);
    }
    let mut sorted = truths.clone();
    sorted.sort_by(f64::total_cmp);
    let median = match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let deviations: Vec<f64> = truths.iter().map(|t| (t - median).abs()).collect();
    Ok(GapReport {
        mean_gap: mean(&gaps),
        constant_gap: mean(&deviations),
        batches,
    })
}
