use std::time::Instant;

use rand::SeedableRng;

use super::{evaluate, meta_loss, Result, Trace, TraceRecord, TrainConfig, TrainData, TrainError};
use crate::autodiff::{Mode, Tape, Tensor};
use crate::data::BatchSampler;
use crate::metrics::true_loss;
use crate::nets::{clip_gradients, AdamConfig, AdamState, NetError, ScoreModel, SurrogateNet};
use crate::SeededRng;

/// Running sums for the loss columns between two trace records.
#[derive(Default)]
pub(super) struct Window {
    surrogate: (f64, u64),
    meta: (f64, u64),
}

impl Window {
    pub(super) fn add_surrogate(&mut self, v: f64) {
        self.surrogate.0 += v;
        self.surrogate.1 += 1;
    }

    fn add_meta(&mut self, v: f64) {
        self.meta.0 += v;
        self.meta.1 += 1;
    }

    pub(super) fn take(&mut self) -> (Option<f64>, Option<f64>) {
        let avg = |(s, n): (f64, u64)| (n > 0).then(|| s / n as f64);
        let out = (avg(self.surrogate), avg(self.meta));
        *self = Window::default();
        out
    }
}

pub(super) fn non_finite(trace: &Trace, iteration: u64, quantity: &'static str) -> TrainError {
    TrainError::NonFinite {
        iteration,
        quantity,
        trace: Box::new(trace.clone()),
    }
}

/// Maps optimizer refusals of NaN/inf gradients to a trace-carrying error.
pub(super) fn step_error(e: NetError, trace: &Trace, iteration: u64, quantity: &'static str) -> TrainError {
    match e {
        NetError::NonFiniteGradient(_) => non_finite(trace, iteration, quantity),
        other => other.into(),
    }
}

/// Appends a trace record with full-split true losses at `config.gamma`.
pub(super) fn record<M: ScoreModel>(
    trace: &mut Trace,
    config: &TrainConfig,
    data: TrainData,
    model: &mut M,
    iteration: u64,
    losses: (Option<f64>, Option<f64>),
    started: Instant,
) -> Result<()> {
    let true_train_loss = Some(evaluate(model, data.train, config.metric, config.gamma)?);
    let true_test_loss = match data.test {
        Some(test) => Some(evaluate(model, test, config.metric, config.gamma)?),
        None => None,
    };
    trace.records.push(TraceRecord {
        iteration,
        surrogate_loss: losses.0,
        meta_loss: losses.1,
        true_train_loss,
        true_test_loss,
        wall_ms: started.elapsed().as_millis() as u64,
        alpha_steps: trace.counters.alpha_steps,
        beta_steps: trace.counters.beta_steps,
    });
    Ok(())
}

/// Runs `config.iterations` outer iterations. Each one makes `k_alpha`
/// predictor updates descending the surrogate loss on fresh stratified
/// batches, then `k_beta` surrogate updates descending
/// `|surrogate - true loss|` on fresh batches scored by the frozen
/// predictor in eval mode. Every step clips the updated network's gradient
/// to `clip_norm` before its Adam update.
///
/// `observer` is called after every outer iteration.
pub fn train_bilevel<M: ScoreModel>(
    config: &TrainConfig,
    data: TrainData,
    model: &mut M,
    surrogate: &mut SurrogateNet,
    rng: &mut SeededRng,
    observer: &mut dyn FnMut(u64, &M, &SurrogateNet),
) -> Result<Trace> {
    config.validate()?;
    let started = Instant::now();
    let mut sampler = BatchSampler::new(data.train.targets(), config.batch_size, SeededRng::from_rng(&mut *rng))?;
    let mut adam_alpha = AdamState::new(model.params(), AdamConfig::with_learning_rate(config.eta_alpha));
    let mut adam_beta = AdamState::new(surrogate.params(), AdamConfig::with_learning_rate(config.eta_beta));
    let q_alpha = model.params().count() as u64;
    let q_beta = surrogate.params().count() as u64;

    let mut trace = Trace::default();
    let mut window = Window::default();
    let mut tape = Tape::new();
    record(&mut trace, config, data, model, 0, (None, None), started)?;

    for t in 1..=config.iterations {
        let beta_before = config.audit.then(|| surrogate.params().checksum());
        let mut surrogate_sum = 0.0;
        for _ in 0..config.k_alpha {
            let batch = sampler.sample_batch(data.train);
            tape.clear();
            let a_vars = model.params().bind(&mut tape);
            let b_vars = surrogate.params().bind(&mut tape);
            let x = tape.constant(batch.features);
            let scores = model.forward(&mut tape, &a_vars, x, Mode::Train, rng)?;
            let loss = surrogate.forward(&mut tape, &b_vars, &batch.targets, scores)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite(&trace, t, "surrogate loss"));
            }
            tape.backward(loss)?;
            let mut grads = model.params().gradients(&tape, &a_vars);
            clip_gradients(&mut grads, config.clip_norm);
            adam_alpha
                .step(model.params_mut(), &grads)
                .map_err(|e| step_error(e, &trace, t, "predictor gradient"))?;
            trace.counters.alpha_steps += 1;
            trace.counters.param_gradients += q_alpha + q_beta;
            surrogate_sum += value;
        }
        if let Some(before) = beta_before {
            trace.counters.isolation_checks += 1;
            if surrogate.params().checksum() != before {
                return Err(TrainError::PhaseIsolation {
                    iteration: t,
                    phase: "predictor",
                    network: "surrogate",
                });
            }
        }
        let surrogate_mean = surrogate_sum / config.k_alpha as f64;
        trace.surrogate_history.push(surrogate_mean);
        window.add_surrogate(surrogate_mean);

        let alpha_before = config.audit.then(|| model.state_checksum());
        let mut meta_sum = 0.0;
        for _ in 0..config.k_beta {
            let batch = sampler.sample_batch(data.train);
            let scores = model.predict(&batch.features)?;
            let truth = true_loss(config.metric, &batch.targets, &scores, config.gamma)?;
            tape.clear();
            let b_vars = surrogate.params().bind(&mut tape);
            let s = tape.constant(Tensor::vector(scores));
            let estimate = surrogate.forward(&mut tape, &b_vars, &batch.targets, s)?;
            let meta = meta_loss(&mut tape, truth, estimate)?;
            let value = tape.value(meta).item();
            if !value.is_finite() {
                return Err(non_finite(&trace, t, "meta-loss"));
            }
            tape.backward(meta)?;
            let mut grads = surrogate.params().gradients(&tape, &b_vars);
            clip_gradients(&mut grads, config.clip_norm);
            adam_beta
                .step(surrogate.params_mut(), &grads)
                .map_err(|e| step_error(e, &trace, t, "surrogate gradient"))?;
            trace.counters.beta_steps += 1;
            trace.counters.param_gradients += q_beta;
            meta_sum += value;
        }
        if let Some(before) = alpha_before {
            trace.counters.isolation_checks += 1;
            if model.state_checksum() != before {
                return Err(TrainError::PhaseIsolation {
                    iteration: t,
                    phase: "surrogate",
                    network: "predictor",
                });
            }
        }
        if config.k_beta > 0 {
            let meta_mean = meta_sum / config.k_beta as f64;
            trace.meta_history.push(meta_mean);
            window.add_meta(meta_mean);
        }

        observer(t, model, surrogate);
        if t % config.eval_every == 0 || t == config.iterations {
            record(&mut trace, config, data, model, t, window.take(), started)?;
        }
    }
    Ok(trace)
}
