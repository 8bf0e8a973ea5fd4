use super::*;
use crate::autodiff::Tensor;
use crate::data::{synth_clusters, synth_toy_1d, ClusterSpec};
use crate::nets::{LinearThreshold, PredictionArch, PredictionNet, SurrogateArch, SurrogateNet};
use crate::seeded_rng;

#[test]
fn meta_loss_examples() {
    for (truth, est, value, grad) in [(0.3, 0.3, 0.0, 0.0), (0.0, 0.7, 0.7, 1.0), (0.9, 0.2, 0.7, -1.0)] {
        let mut tape = Tape::new();
        let s = tape.param(Tensor::scalar(est));
        let m = meta_loss(&mut tape, truth, s).unwrap();
        assert!((tape.value(m).item() - value).abs() < 1e-15);
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(s).item(), grad);
    }
    let mut tape = Tape::new();
    let s = tape.param(Tensor::scalar(0.0));
    assert!(meta_loss(&mut tape, f64::NAN, s).is_err());
}

fn small_setup(seed: u64) -> (Dataset, Dataset, PredictionNet, SurrogateNet) {
    let ds = synth_clusters(&ClusterSpec {
        n: 300,
        dim: 4,
        seed,
        ..ClusterSpec::default()
    })
    .unwrap();
    let (train, test) = crate::data::train_test_split(&ds, Default::default()).unwrap();
    let mut rng = seeded_rng(seed);
    let arch = PredictionArch {
        hidden: vec![16, 8],
        ..PredictionArch::default()
    };
    let model = PredictionNet::new(4, arch, &mut rng).unwrap();
    let sur = SurrogateNet::new(SurrogateArch::default(), &mut rng).unwrap();
    (train, test, model, sur)
}

fn quick_config(iterations: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 20,
        eval_every: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn step_counts_follow_the_loop_bounds() {
    let (train, test, mut model, mut sur) = small_setup(1);
    let config = quick_config(5);
    let data = TrainData { train: &train, test: Some(&test) };
    let trace = train_bilevel(&config, data, &mut model, &mut sur, &mut seeded_rng(0), &mut |_, _, _| {}).unwrap();
    let c = trace.counters;
    assert_eq!(c.alpha_steps, 15);
    assert_eq!(c.beta_steps, 50);
    let (qa, qb) = (model.params().count() as u64, sur.params().count() as u64);
    assert_eq!(c.param_gradients, 5 * (3 * (qa + qb) + 10 * qb));
    let iters: Vec<u64> = trace.records.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, vec![0, 2, 4, 5]);
    assert_eq!(trace.surrogate_history.len(), 5);
    assert_eq!(trace.meta_history.len(), 5);
    let last = trace.last().unwrap();
    assert_eq!((last.alpha_steps, last.beta_steps), (15, 50));
    assert!(last.true_test_loss.is_some());
}

#[test]
fn frozen_surrogate_is_bitwise_unchanged() {
    let (train, _, mut model, mut sur) = small_setup(2);
    let before = sur.clone();
    let config = TrainConfig {
        k_beta: 0,
        ..quick_config(4)
    };
    let data = TrainData { train: &train, test: None };
    let trace = train_bilevel(&config, data, &mut model, &mut sur, &mut seeded_rng(0), &mut |_, _, _| {}).unwrap();
    assert_eq!(sur, before);
    assert_eq!(trace.counters.beta_steps, 0);
    assert!(trace.meta_history.is_empty());
    assert!(trace.records.iter().all(|r| r.meta_loss.is_none()));
}

#[test]
fn audit_checks_every_phase() {
    let (train, _, mut model, mut sur) = small_setup(3);
    let config = TrainConfig {
        audit: true,
        ..quick_config(6)
    };
    let data = TrainData { train: &train, test: None };
    let trace = train_bilevel(&config, data, &mut model, &mut sur, &mut seeded_rng(0), &mut |_, _, _| {}).unwrap();
    assert_eq!(trace.counters.isolation_checks, 12);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let run = || {
        let (train, test, mut model, mut sur) = small_setup(4);
        let data = TrainData { train: &train, test: Some(&test) };
        let trace = train_bilevel(&quick_config(6), data, &mut model, &mut sur, &mut seeded_rng(9), &mut |_, _, _| {})
            .unwrap();
        (strip_wall_clock(&trace.to_csv()), model.state_checksum(), sur.params().checksum())
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_surrogate_aborts_with_trace() {
    let (train, _, mut model, mut sur) = small_setup(5);
    sur.params_mut().blocks_mut()[0].data_mut()[0] = f64::NAN;
    let data = TrainData { train: &train, test: None };
    let err = train_bilevel(&quick_config(3), data, &mut model, &mut sur, &mut seeded_rng(0), &mut |_, _, _| {})
        .unwrap_err();
    match err {
        TrainError::NonFinite { iteration, trace, .. } => {
            assert_eq!(iteration, 1);
            assert_eq!(trace.records.len(), 1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig { k_alpha: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { clip_norm: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
    let parsed: TrainConfig = toml::from_str("iterations = 7\nmetric = \"F1\"").unwrap();
    assert_eq!(parsed.iterations, 7);
    assert_eq!(parsed.metric, MetricId::F1);
    assert_eq!(parsed.k_beta, 10);
    assert_eq!("sl-r".parse::<SurrogateMode>().unwrap(), SurrogateMode::Refined);
}

#[test]
fn evaluate_examples() {
    let ds = synth_toy_1d(200, &mut seeded_rng(0)).unwrap();
    // threshold at x = 1/alpha = 3.5 sits between the clusters
    let mut line = LinearThreshold::new(1.0 / 3.5);
    let mcr = evaluate(&mut line, &ds, MetricId::Mcr, 0.0).unwrap();
    assert!(mcr < 0.05);
    let separable = Dataset::new(
        "sep",
        Tensor::matrix(4, 1, vec![0.0, 1.0, 5.0, 6.0]),
        vec![false, false, true, true],
    )
    .unwrap();
    assert_eq!(evaluate(&mut line, &separable, MetricId::Mcr, 0.0).unwrap(), 0.0);
    let (_, _, mut model, _) = small_setup(6);
    let big = synth_clusters(&ClusterSpec { dim: 4, ..ClusterSpec::default() }).unwrap();
    let a = evaluate(&mut model, &big, MetricId::Auc, -3.0).unwrap();
    let b = evaluate(&mut model, &big, MetricId::Auc, 3.0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, evaluate(&mut model, &big, MetricId::Auc, 0.0).unwrap());
}

#[test]
fn baselines_use_the_alpha_budget() {
    for which in [
        Baseline::CrossEntropy,
        Baseline::PairwiseRanking,
        Baseline::CostSensitive { positive_weight: 2.7 },
    ] {
        let (train, test, mut model, _) = small_setup(7);
        let data = TrainData { train: &train, test: Some(&test) };
        let trace = train_baseline(which, &quick_config(4), data, &mut model, &mut seeded_rng(1)).unwrap();
        assert_eq!(trace.counters.alpha_steps, 12);
        assert_eq!(trace.counters.beta_steps, 0);
        assert_eq!(trace.counters.param_gradients, 12 * model.params().count() as u64);
        assert!(trace.surrogate_history.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn short_pretraining_reduces_the_gap() {
    let mut rng = seeded_rng(8);
    let mut sur = SurrogateNet::new(SurrogateArch::default(), &mut rng).unwrap();
    let config = PretrainConfig {
        steps: 1500,
        ..PretrainConfig::default()
    };
    let before = surrogate_gap(&sur, MetricId::Mcr, &config, 200, &mut seeded_rng(100)).unwrap();
    let report = pretrain_universal(&mut sur, MetricId::Mcr, &config, &mut rng).unwrap();
    let after = surrogate_gap(&sur, MetricId::Mcr, &config, 200, &mut seeded_rng(100)).unwrap();
    assert_eq!(report.steps, 1500);
    assert!(after.mean_gap < 0.5 * before.mean_gap, "{before:?} -> {after:?}");
    assert_eq!(before.constant_gap, after.constant_gap);
}

#[test]
fn ranking_pretraining_resamples_single_class_batches() {
    let mut rng = seeded_rng(9);
    let mut sur = SurrogateNet::new(SurrogateArch::default(), &mut rng).unwrap();
    let config = PretrainConfig {
        steps: 50,
        batch_size: 2,
        ..PretrainConfig::default()
    };
    let report = pretrain_universal(&mut sur, MetricId::Auc, &config, &mut rng).unwrap();
    assert_eq!(report.steps, 50);
    assert!(report.resampled > 0);
}

#[test]
fn trace_csv_layout() {
    let trace = Trace {
        records: vec![TraceRecord {
            iteration: 3,
            surrogate_loss: Some(0.25),
            meta_loss: None,
            true_train_loss: Some(0.5),
            true_test_loss: None,
            wall_ms: 17,
            alpha_steps: 9,
            beta_steps: 30,
        }],
        ..Trace::default()
    };
    let csv = trace.to_csv();
    assert_eq!(
        csv,
        "iter,surrogate_loss,meta_loss,true_train_loss,true_test_loss,wall_ms,alpha_steps,beta_steps\n3,0.25,,0.5,,17,9,30\n"
    );
    assert_eq!(
        strip_wall_clock(&csv),
        "iter,surrogate_loss,meta_loss,true_train_loss,true_test_loss,alpha_steps,beta_steps\n3,0.25,,0.5,,9,30"
    );
}
