use std::time::Instant;

use rand::SeedableRng;

use super::bilevel::{non_finite, record, step_error, Window};
use super::{Baseline, Result, Trace, TrainConfig, TrainData};
use crate::autodiff::Mode;
use crate::autodiff::Tape;
use crate::data::BatchSampler;
use crate::nets::{clip_gradients, AdamConfig, AdamState, ScoreModel};
use crate::SeededRng;

/// Single-level training on a differentiable baseline loss with the same
/// budget and protocol as the bilevel trainer: `iterations * k_alpha` Adam
/// steps at `eta_alpha` on fresh stratified batches, clipped to
/// `clip_norm`. The trace's surrogate column holds the baseline loss.
pub fn train_baseline<M: ScoreModel>(
    which: Baseline,
    config: &TrainConfig,
    data: TrainData,
    model: &mut M,
    rng: &mut SeededRng,
) -> Result<Trace> {
    config.validate()?;
    let started = Instant::now();
    let mut sampler = BatchSampler::new(data.train.targets(), config.batch_size, SeededRng::from_rng(&mut *rng))?;
    let mut adam = AdamState::new(model.params(), AdamConfig::with_learning_rate(config.eta_alpha));
    let q_alpha = model.params().count() as u64;
    let mut trace = Trace::default();
    let mut window = Window::default();
    let mut tape = Tape::new();
    record(&mut trace, config, data, model, 0, (None, None), started)?;

    for t in 1..=config.iterations {
        let mut sum = 0.0;
        for _ in 0..config.k_alpha {
            let batch = sampler.sample_batch(data.train);
            tape.clear();
            let vars = model.params().bind(&mut tape);
            let x = tape.constant(batch.features);
            let scores = model.forward(&mut tape, &vars, x, Mode::Train, rng)?;
            let loss = match which {
                Baseline::CrossEntropy => tape.bce_with_logits(scores, &batch.targets, 1.0)?,
                Baseline::CostSensitive { positive_weight } => {
                    tape.bce_with_logits(scores, &batch.targets, positive_weight)?
                }
                Baseline::PairwiseRanking => tape.pairwise_hinge(scores, &batch.targets, 1.0)?,
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite(&trace, t, "baseline loss"));
            }
            tape.backward(loss)?;
            let mut grads = model.params().gradients(&tape, &vars);
            clip_gradients(&mut grads, config.clip_norm);
            adam.step(model.params_mut(), &grads)
                .map_err(|e| step_error(e, &trace, t, "predictor gradient"))?;
            trace.counters.alpha_steps += 1;
            trace.counters.param_gradients += q_alpha;
            sum += value;
        }
        let mean = sum / config.k_alpha as f64;
        trace.surrogate_history.push(mean);
        window.add_surrogate(mean);
        if t % config.eval_every == 0 || t == config.iterations {
            record(&mut trace, config, data, model, t, window.take(), started)?;
        }
    }
    Ok(trace)
}
