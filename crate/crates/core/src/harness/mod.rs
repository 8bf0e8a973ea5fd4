//! Config-driven experiment grids: dataset preparation, one run directory
//! per (dataset, metric, method, seed), threshold calibration, results
//! files and rank/win reports.

mod report;
mod toy;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    carve_validation, load_csv, load_libsvm, load_registered, standardize, synth_clusters,
    train_test_split, ClusterSpec, DataError, Dataset, FetchError, HttpTransport, Registry,
    SourceFormat, SplitSpec, VALIDATION_FRACTION,
};
use crate::metrics::{calibrate_threshold, default_grid, true_loss, MetricError, MetricId};
use crate::nets::{Checkpoint, NetError, PredictionArch, PredictionNet, SurrogateArch, SurrogateNet};
use crate::seeded_rng;
use crate::training::{
    evaluate, predict_scores, pretrain_universal, train_baseline, train_bilevel, Baseline,
    PretrainConfig, StepCounters, SurrogateMode, Trace, TrainConfig, TrainData, TrainError,
    COST_SENSITIVE_GRID,
};

pub use report::{average_ranks, ReportTable};
pub use toy::{run_toy_demo, CurvePoint, ToyConfig, ToyOutcome, ToySnapshot};

/// Environment variable setting the worker count of grid runs.
pub const WORKERS_ENV: &str = "SURROGATE_WORKERS";

/// Mixed into the run seed to derive the pretraining stream.
const PRETRAIN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no checkpoint at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A training method in an experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SL-U")]
    SlU,
    #[serde(rename = "SL-S")]
    SlS,
    #[serde(rename = "SL-R")]
    SlR,
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "PR")]
    Pr,
    #[serde(rename = "CS")]
    Cs,
}

impl Method {
    pub const ALL: [Method; 6] = [Self::SlU, Self::SlS, Self::SlR, Self::Ce, Self::Pr, Self::Cs];

    pub fn name(&self) -> &'static str {
        match self {
            Self::SlU => "SL-U",
            Self::SlS => "SL-S",
            Self::SlR => "SL-R",
            Self::Ce => "CE",
            Self::Pr => "PR",
            Self::Cs => "CS",
        }
    }

    pub fn surrogate_mode(&self) -> Option<SurrogateMode> {
        match self {
            Self::SlU => Some(SurrogateMode::Universal),
            Self::SlS => Some(SurrogateMode::Scratch),
            Self::SlR => Some(SurrogateMode::Refined),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Spec(format!("unknown method {s:?}")))
    }
}

/// Where a dataset comes from; exactly one source must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub name: String,
    /// Two-cluster Gaussian data generated from these parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<ClusterSpec>,
    /// Local LIBSVM or CSV file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Registry file to fetch `name` from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    /// Format of `path`; inferred from the extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<SourceFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_column: Option<String>,
}

impl DatasetRef {
    fn validate(&self) -> Result<(), HarnessError> {
        let sources = [self.synthetic.is_some(), self.path.is_some(), self.registry.is_some()]
            .iter()
            .filter(|&&s| s)
            .count();
        if sources != 1 {
            return Err(HarnessError::Spec(format!(
                "dataset {:?} needs exactly one of synthetic, path, registry",
                self.name
            )));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(HarnessError::Spec(format!("bad dataset name {:?}", self.name)));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.path, &mut self.registry].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn load(&self, cache_dir: &Path) -> Result<Dataset, HarnessError> {
        let mut ds = if let Some(spec) = &self.synthetic {
            synth_clusters(spec)?
        } else if let Some(path) = &self.path {
            let format = self.format.unwrap_or_else(|| {
                match path.extension().and_then(|e| e.to_str()) {
                    Some("csv") => SourceFormat::Csv,
                    _ => SourceFormat::Libsvm,
                }
            });
            match format {
                SourceFormat::Libsvm => load_libsvm(path)?,
                SourceFormat::Csv => load_csv(path, self.target_column.as_deref().unwrap_or("target"))?,
            }
        } else {
            let registry = Registry::load(self.registry.as_ref().unwrap())?;
            load_registered(&registry, &self.name, cache_dir, &HttpTransport)?
        };
        ds.name = self.name.clone();
        Ok(ds)
    }
}

/// Train-fitting, validation and test parts of one dataset, standardized
/// with statistics of the fitting part when requested.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fit: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

pub fn prepare(ds: &Dataset, split: SplitSpec, standardized: bool) -> Result<Prepared, HarnessError> {
    let (train, test) = train_test_split(ds, split)?;
    let (fit, validation) = carve_validation(&train, VALIDATION_FRACTION, split.seed.wrapping_add(1))?;
    if !standardized {
        return Ok(Prepared { fit, validation, test });
    }
    let (fit_s, test_s, st) = standardize(&fit, &test);
    Ok(Prepared {
        fit: fit_s,
        validation: st.apply(&validation),
        test: test_s,
    })
}

/// A complete experiment description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub datasets: Vec<DatasetRef>,
    pub metrics: Vec<MetricId>,
    pub modes: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub workers: Option<usize>,
    pub split: SplitSpec,
    pub standardize: bool,
    pub gamma_grid_points: usize,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub prediction: PredictionArch,
    pub surrogate: SurrogateArch,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            datasets: Vec::new(),
            metrics: Vec::new(),
            modes: Vec::new(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            workers: None,
            split: SplitSpec::default(),
            standardize: true,
            gamma_grid_points: 101,
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            prediction: PredictionArch::default(),
            surrogate: SurrogateArch::default(),
        }
    }
}

impl ExperimentSpec {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut spec: Self = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        for d in &mut spec.datasets {
            d.resolve_paths(base_dir);
        }
        if spec.output_dir.is_relative() {
            spec.output_dir = base_dir.join(&spec.output_dir);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let empty = |what: &str| Err(HarnessError::Spec(format!("no {what} listed")));
        if self.datasets.is_empty() {
            return empty("datasets");
        }
        if self.metrics.is_empty() {
            return empty("metrics");
        }
        if self.modes.is_empty() {
            return empty("modes");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        for d in &self.datasets {
            d.validate()?;
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Spec("dataset names must be unique".into()));
        }
        if self.gamma_grid_points == 0 {
            return Err(HarnessError::Spec("gamma_grid_points must be positive".into()));
        }
        self.train
            .validate()
            .map_err(|e| HarnessError::Spec(e.to_string()))
    }

    /// All (dataset, metric, method, seed) combinations in a fixed order.
    pub fn grid(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for d in &self.datasets {
            for &metric in &self.metrics {
                for &method in &self.modes {
                    for &seed in &self.seeds {
                        keys.push(RunKey {
                            dataset: d.name.clone(),
                            metric,
                            method,
                            seed,
                        });
                    }
                }
            }
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub dataset: String,
    pub metric: MetricId,
    pub method: Method,
    pub seed: u64,
}

impl RunKey {
    /// `<dataset>/<metric>/<mode>/seed-<k>` under `root`.
    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(&self.dataset)
            .join(self.metric.name())
            .join(self.method.name())
            .join(format!("seed-{}", self.seed))
    }
}

/// Interpretation choices a reader needs to reproduce a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFlags {
    pub layer_order: String,
    pub beta_phase_prediction_mode: String,
    pub evaluation_mode: String,
    pub preprocessing: String,
    pub training_gamma: f64,
    pub validation_fraction: f64,
    pub eer: String,
}

impl DesignFlags {
    fn new(spec: &ExperimentSpec) -> Self {
        Self {
            layer_order: "dense, leaky-relu, batchnorm, dropout".into(),
            beta_phase_prediction_mode: "eval".into(),
            evaluation_mode: "eval".into(),
            preprocessing: if spec.standardize { "standardize" } else { "none" }.into(),
            training_gamma: spec.train.gamma,
            validation_fraction: VALIDATION_FRACTION,
            eer: "roc-convex-hull".into(),
        }
    }
}

/// Everything needed to recreate a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub dataset: DatasetRef,
    pub split: SplitSpec,
    pub standardize: bool,
    pub gamma_grid_points: usize,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    pub prediction: PredictionArch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateArch>,
    pub flags: DesignFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok {
        test_loss: f64,
        validation_loss: f64,
        train_loss: f64,
        /// Calibrated threshold; absent for ranking metrics.
        gamma: Option<f64>,
        gamma_degenerate: bool,
        /// Selected positive-class weight of the cost-sensitive baseline.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cs_weight: Option<f64>,
        counters: StepCounters,
        seconds: f64,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub metric: MetricId,
    pub method: Method,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub provenance: Provenance,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        matches!(self.status, RunStatus::Ok { .. })
    }

    pub fn test_loss(&self) -> Option<f64> {
        match self.status {
            RunStatus::Ok { test_loss, .. } => Some(test_loss),
            RunStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub experiment: String,
    pub version: String,
    pub runs: Vec<RunResult>,
}

impl ResultsFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        read_json(path.as_ref())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("results serialize");
    fs::write(path, text + "\n").map_err(io_error(path))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Rerun combinations that already have a successful result.
    pub force: bool,
    pub workers: usize,
    pub cache_dir: PathBuf,
}

/// Flag value, else `$SURROGATE_WORKERS`, else the spec, else 1.
pub fn resolve_workers(flag: Option<usize>, spec: &ExperimentSpec) -> usize {
    flag.or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .or(spec.workers)
        .unwrap_or(1)
        .max(1)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<RunResult>,
    pub table: ReportTable,
    /// Runs whose existing results were reused.
    pub reused: usize,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.results.iter().filter(|r| !r.is_ok()).count()
    }
}

/// Executes every grid combination and writes per-run artifacts,
/// `results.json` and `report.md` under the output directory. Failed runs
/// are recorded and do not stop the grid.
pub fn run_experiment(spec: &ExperimentSpec, options: &RunOptions) -> Result<ExperimentOutcome, HarnessError> {
    spec.validate()?;
    let root = &spec.output_dir;
    fs::create_dir_all(root).map_err(io_error(root))?;
    let prepared: Vec<(String, Result<Prepared, String>)> = spec
        .datasets
        .iter()
        .map(|d| {
            let p = d
                .load(&options.cache_dir)
                .and_then(|ds| prepare(&ds, spec.split, spec.standardize))
                .map_err(|e| e.to_string());
            (d.name.clone(), p)
        })
        .collect();
    let keys = spec.grid();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Spec(format!("worker pool: {e}")))?;
    let outcomes: Vec<(RunResult, bool)> = pool.install(|| {
        keys.par_iter()
            .map(|key| {
                let data = &prepared.iter().find(|(n, _)| *n == key.dataset).unwrap().1;
                run_one(spec, key, data, options)
            })
            .collect()
    });
    let reused = outcomes.iter().filter(|(_, r)| *r).count();
    let results: Vec<RunResult> = outcomes.into_iter().map(|(r, _)| r).collect();
    let file = ResultsFile {
        experiment: spec.name.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        runs: results.clone(),
    };
    write_json(&root.join("results.json"), &file)?;
    let table = ReportTable::from_results(&results);
    let report = root.join("report.md");
    fs::write(&report, table.render()).map_err(io_error(&report))?;
    Ok(ExperimentOutcome {
        results,
        table,
        reused,
    })
}

fn provenance(spec: &ExperimentSpec, key: &RunKey) -> Provenance {
    let dataset = spec.datasets.iter().find(|d| d.name == key.dataset).unwrap().clone();
    let mut train = spec.train.clone();
    train.metric = key.metric;
    let mode = key.method.surrogate_mode();
    if mode == Some(SurrogateMode::Universal) {
        train.k_beta = 0;
    }
    Provenance {
        version: env!("CARGO_PKG_VERSION").into(),
        dataset,
        split: spec.split,
        standardize: spec.standardize,
        gamma_grid_points: spec.gamma_grid_points,
        train,
        pretrain: mode.filter(|m| m.pretrains()).map(|_| spec.pretrain.clone()),
        prediction: spec.prediction.clone(),
        surrogate: mode.map(|_| spec.surrogate.clone()),
        flags: DesignFlags::new(spec),
    }
}

/// Returns the result and whether it was reused from disk.
fn run_one(
    spec: &ExperimentSpec,
    key: &RunKey,
    data: &Result<Prepared, String>,
    options: &RunOptions,
) -> (RunResult, bool) {
    let dir = key.dir(&spec.output_dir);
    let result_path = dir.join("run.json");
    let provenance = provenance(spec, key);
    if !options.force {
        if let Ok(existing) = read_json::<RunResult>(&result_path) {
            if existing.is_ok() && existing.provenance == provenance {
                log::info!("reusing {}", dir.display());
                return (existing, true);
            }
        }
    }
    let started = Instant::now();
    let status = match data {
        Err(e) => RunStatus::Failed { error: e.clone() },
        Ok(p) => match fs::create_dir_all(&dir).map_err(io_error(&dir)) {
            Err(e) => RunStatus::Failed { error: e.to_string() },
            Ok(()) => match execute(&provenance, key, p, &dir) {
                Ok(mut status) => {
                    if let RunStatus::Ok { seconds, test_loss, .. } = &mut status {
                        *seconds = started.elapsed().as_secs_f64();
                        log::info!("{}: test loss {test_loss:.4} in {seconds:.1}s", dir.display());
                    }
                    status
                }
                Err(e) => {
                    log::warn!("run {} failed: {e}", dir.display());
                    RunStatus::Failed { error: e.to_string() }
                }
            },
        },
    };
    let result = RunResult {
        dataset: key.dataset.clone(),
        metric: key.metric,
        method: key.method,
        seed: key.seed,
        status,
        provenance,
    };
    if dir.exists() {
        if let Err(e) = write_json(&result_path, &result) {
            log::warn!("{e}");
        }
    }
    (result, false)
}

/// Threshold chosen on the validation part and the losses at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrated {
    pub gamma: Option<f64>,
    pub degenerate: bool,
    pub validation_loss: f64,
    pub test_loss: f64,
}

/// Ranking metrics are threshold-free and skip the search.
pub fn calibrate_on(
    model: &mut PredictionNet,
    data: &Prepared,
    metric: MetricId,
    grid_points: usize,
) -> Result<Calibrated, HarnessError> {
    let val_scores = predict_scores(model, &data.validation)?;
    let (gamma, degenerate, validation_loss) = if metric.is_thresholded() {
        let grid = default_grid(&val_scores, grid_points);
        let c = calibrate_threshold(metric, data.validation.targets(), &val_scores, &grid)?;
        (Some(c.gamma), c.degenerate, c.loss)
    } else {
        let loss = true_loss(metric, data.validation.targets(), &val_scores, 0.0)?;
        (None, false, loss)
    };
    let test_loss = evaluate(model, &data.test, metric, gamma.unwrap_or(0.0))?;
    Ok(Calibrated {
        gamma,
        degenerate,
        validation_loss,
        test_loss,
    })
}

fn save_trace(dir: &Path, trace: &Trace) -> Result<(), HarnessError> {
    let path = dir.join("trace.csv");
    trace.write_csv(&path).map_err(io_error(&path))
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), HarnessError> {
    ck.save(path).map_err(|e| HarnessError::Net(e.into()))
}

fn execute(prov: &Provenance, key: &RunKey, data: &Prepared, dir: &Path) -> Result<RunStatus, HarnessError> {
    let config = &prov.train;
    let split = TrainData {
        train: &data.fit,
        test: Some(&data.test),
    };
    let fresh_model = || {
        let mut rng = seeded_rng(key.seed);
        PredictionNet::new(data.fit.dim(), prov.prediction.clone(), &mut rng).map(|m| (m, rng))
    };
    let keep_trace = |r: Result<Trace, TrainError>| -> Result<Trace, HarnessError> {
        match r {
            Err(TrainError::NonFinite { trace, iteration, quantity }) => {
                save_trace(dir, &trace)?;
                Err(TrainError::NonFinite { trace, iteration, quantity }.into())
            }
            other => Ok(other?),
        }
    };

    let (mut model, trace, cs_weight, calibrated) = match key.method.surrogate_mode() {
        Some(_) => {
            let (mut model, mut rng) = fresh_model()?;
            let arch = prov.surrogate.clone().unwrap_or_default();
            let mut surrogate = SurrogateNet::new(arch, &mut rng)?;
            if let Some(pre) = &prov.pretrain {
                let mut pre_rng = seeded_rng(key.seed ^ PRETRAIN_SALT);
                pretrain_universal(&mut surrogate, key.metric, pre, &mut pre_rng)?;
            }
            let trace = keep_trace(train_bilevel(config, split, &mut model, &mut surrogate, &mut rng, &mut |_, _, _| {}))?;
            save_checkpoint(&dir.join("surrogate.ckpt"), &surrogate.to_checkpoint(key.seed))?;
            let cal = calibrate_on(&mut model, data, key.metric, prov.gamma_grid_points)?;
            (model, trace, None, cal)
        }
        None => {
            let candidates: Vec<(Baseline, Option<f64>)> = match key.method {
                Method::Ce => vec![(Baseline::CrossEntropy, None)],
                Method::Pr => vec![(Baseline::PairwiseRanking, None)],
                _ => COST_SENSITIVE_GRID
                    .iter()
                    .map(|&w| (Baseline::CostSensitive { positive_weight: w }, Some(w)))
                    .collect(),
            };
            let mut best: Option<(PredictionNet, Trace, Option<f64>, Calibrated)> = None;
            for (which, weight) in candidates {
                let (mut model, mut rng) = fresh_model()?;
                let trace = keep_trace(train_baseline(which, config, split, &mut model, &mut rng))?;
                let cal = calibrate_on(&mut model, data, key.metric, prov.gamma_grid_points)?;
                if best.as_ref().is_none_or(|b| cal.validation_loss < b.3.validation_loss) {
                    best = Some((model, trace, weight, cal));
                }
            }
            best.expect("at least one candidate")
        }
    };
    save_trace(dir, &trace)?;
    save_checkpoint(&dir.join("model.ckpt"), &model.to_checkpoint(key.seed))?;
    let train_loss = evaluate(&mut model, &data.fit, key.metric, calibrated.gamma.unwrap_or(0.0))?;
    Ok(RunStatus::Ok {
        test_loss: calibrated.test_loss,
        validation_loss: calibrated.validation_loss,
        train_loss,
        gamma: calibrated.gamma,
        gamma_degenerate: calibrated.degenerate,
        cs_weight,
        counters: trace.counters,
        seconds: 0.0,
    })
}

/// Re-selects the threshold of a finished run from its checkpoint and
/// stored provenance, and reports the test loss at that threshold.
pub fn calibrate_and_eval(run_dir: &Path, cache_dir: &Path) -> Result<Calibrated, HarnessError> {
    let result: RunResult = read_json(&run_dir.join("run.json"))?;
    let ck_path = run_dir.join("model.ckpt");
    if !ck_path.exists() {
        return Err(HarnessError::MissingCheckpoint(ck_path));
    }
    let ck = Checkpoint::load(&ck_path).map_err(|e| HarnessError::Net(e.into()))?;
    let mut model = PredictionNet::from_checkpoint(&ck)?;
    let prov = &result.provenance;
    let ds = prov.dataset.load(cache_dir)?;
    let data = prepare(&ds, prov.split, prov.standardize)?;
    calibrate_on(&mut model, &data, result.metric, prov.gamma_grid_points)
}
