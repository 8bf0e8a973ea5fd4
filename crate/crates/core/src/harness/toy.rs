//! One-parameter demonstration: the threshold model `alpha * x - 1` on a
//! two-cluster 1-D dataset, trained against a surrogate learned from
//! scratch. Snapshots compare the exact and learned loss over a grid of
//! `alpha` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, HarnessError};
use crate::data::{synth_toy_1d, Dataset};
use crate::metrics::{true_loss, MetricId};
use crate::nets::{LinearThreshold, SurrogateArch, SurrogateNet};
use crate::training::{train_bilevel, Trace, TrainConfig, TrainData};
use crate::{seeded_rng, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Dataset size.
    pub n: usize,
    pub initial_alpha: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub grid_points: usize,
    /// Half-width of the window around the current alpha in which the
    /// surrogate's fit is summarized.
    pub window: f64,
    pub train: TrainConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            initial_alpha: 1.0,
            alpha_min: -1.0,
            alpha_max: 3.0,
            grid_points: 1001,
            window: 0.2,
            train: TrainConfig {
                iterations: 1000,
                eta_alpha: 1e-3,
                eta_beta: 1e-3,
                eval_every: 50,
                metric: MetricId::Mcr,
                ..TrainConfig::default()
            },
        }
    }
}

impl ToyConfig {
    pub fn alpha_grid(&self) -> Vec<f64> {
        let k = self.grid_points.max(2) - 1;
        (0..=k)
            .map(|i| self.alpha_min + (self.alpha_max - self.alpha_min) * i as f64 / k as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub true_loss: f64,
    pub surrogate_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySnapshot {
    pub iteration: u64,
    pub alpha: f64,
    /// Mean `|true - surrogate|` over grid points within the window
    /// around `alpha`.
    pub window_gap: f64,
    #[serde(skip)]
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOutcome {
    pub seed: u64,
    pub config: ToyConfig,
    pub final_alpha: f64,
    pub final_true_loss: f64,
    /// Best grid value of `alpha` and its loss.
    pub optimum_alpha: f64,
    pub optimum_loss: f64,
    pub snapshots: Vec<ToySnapshot>,
    #[serde(skip)]
    pub trace: Trace,
}

fn scores(ds: &Dataset, alpha: f64) -> Vec<f64> {
    ds.features().data().iter().map(|x| alpha * x - 1.0).collect()
}

fn snapshot(
    config: &ToyConfig,
    ds: &Dataset,
    surrogate: &SurrogateNet,
    iteration: u64,
    alpha: f64,
) -> Result<ToySnapshot, HarnessError> {
    let metric = config.train.metric;
    let mut curve = Vec::with_capacity(config.grid_points);
    for a in config.alpha_grid() {
        let s = scores(ds, a);
        curve.push(CurvePoint {
            alpha: a,
            true_loss: true_loss(metric, ds.targets(), &s, config.train.gamma)?,
            surrogate_loss: surrogate.evaluate(ds.targets(), &s)?,
        });
    }
    let near: Vec<f64> = curve
        .iter()
        .filter(|p| (p.alpha - alpha).abs() <= config.window)
        .map(|p| (p.true_loss - p.surrogate_loss).abs())
        .collect();
    let window_gap = near.iter().sum::<f64>() / near.len().max(1) as f64;
    Ok(ToySnapshot {
        iteration,
        alpha,
        window_gap,
        curve,
    })
}

/// Trains the toy problem and returns the snapshots taken before training,
/// halfway through and at the end. With `out_dir`, also writes
/// `dataset.csv`, `snapshot-<k>.csv`, `trace.csv` and `summary.json`.
pub fn run_toy_demo(config: &ToyConfig, seed: u64, out_dir: Option<&Path>) -> Result<ToyOutcome, HarnessError> {
    let ds = synth_toy_1d(config.n, &mut seeded_rng(seed))?;
    let mut rng: SeededRng = seeded_rng(seed.wrapping_add(1));
    let mut surrogate = SurrogateNet::new(SurrogateArch::default(), &mut rng)?;
    let mut model = LinearThreshold::new(config.initial_alpha);

    let mut snapshots = vec![snapshot(config, &ds, &surrogate, 0, model.alpha())?];
    let mid = config.train.iterations / 2;
    let mut mid_result = Ok(());
    let trace = train_bilevel(
        &config.train,
        TrainData { train: &ds, test: None },
        &mut model,
        &mut surrogate,
        &mut rng,
        &mut |t, m, s| {
            if t == mid && mid > 0 {
                match snapshot(config, &ds, s, t, m.alpha()) {
                    Ok(snap) => snapshots.push(snap),
                    Err(e) => mid_result = Err(e),
                }
            }
        },
    )?;
    mid_result?;
    snapshots.push(snapshot(config, &ds, &surrogate, config.train.iterations, model.alpha())?);

    let final_alpha = model.alpha();
    let final_true_loss = crate::training::evaluate(&mut model, &ds, config.train.metric, config.train.gamma)?;
    let best = snapshots[0]
        .curve
        .iter()
        .min_by(|a, b| a.true_loss.total_cmp(&b.true_loss))
        .expect("grid is non-empty");
    let outcome = ToyOutcome {
        seed,
        config: config.clone(),
        final_alpha,
        final_true_loss,
        optimum_alpha: best.alpha,
        optimum_loss: best.true_loss,
        snapshots,
        trace,
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, &ds, &outcome)?;
    }
    Ok(outcome)
}

fn write_outputs(dir: &Path, ds: &Dataset, outcome: &ToyOutcome) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut data = String::from("x,y\n");
    for (x, &y) in ds.features().data().iter().zip(ds.targets()) {
        data.push_str(&format!("{x:?},{}\n", y as u8));
    }
    let path = dir.join("dataset.csv");
    fs::write(&path, data).map_err(io_error(&path))?;
    for (k, snap) in outcome.snapshots.iter().enumerate() {
        let nearest = snap
            .curve
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.alpha - snap.alpha).abs().total_cmp(&(b.1.alpha - snap.alpha).abs()))
            .map(|(i, _)| i);
        let mut csv = String::from("alpha,true_loss,surrogate_loss,current\n");
        for (i, p) in snap.curve.iter().enumerate() {
            csv.push_str(&format!(
                "{:?},{:?},{:?},{}\n",
                p.alpha,
                p.true_loss,
                p.surrogate_loss,
                (Some(i) == nearest) as u8
            ));
        }
        let path = dir.join(format!("snapshot-{k}.csv"));
        fs::write(&path, csv).map_err(io_error(&path))?;
    }
    let path = dir.join("trace.csv");
    outcome.trace.write_csv(&path).map_err(io_error(&path))?;
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(outcome).expect("outcome serializes");
    fs::write(&path, json).map_err(io_error(&path))?;
    Ok(())
}
