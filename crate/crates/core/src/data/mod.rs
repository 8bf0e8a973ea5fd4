//! Datasets, preprocessing, splits, stratified sampling and synthetic
//! problem generators.

mod fetch;
mod io;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{compensated_sum, Tensor};
use crate::SeededRng;

pub use fetch::{
    default_cache_dir, fetch_dataset, load_registered, FetchError, HttpTransport, Registry,
    RegistryEntry, SourceFormat, Transport, CACHE_DIR_ENV,
};
pub use io::{load_csv, load_libsvm, parse_csv, parse_libsvm, write_libsvm};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("row {row}, column {column:?}: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("csv file has no header row")]
    MissingHeader,
    #[error("no column named {name:?}; columns are {available:?}")]
    UnknownColumn { name: String, available: Vec<String> },
    #[error("dataset has no {0} examples")]
    EmptyClass(&'static str),
    #[error("{0}")]
    InvalidParameter(String),
    #[error("feature matrix has {rows} rows but there are {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("non-finite feature at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Dense binary-labelled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    targets: Vec<bool>,
}

impl Dataset {
    /// `features` must be `n x M` and finite.
    pub fn new(name: impl Into<String>, features: Tensor, targets: Vec<bool>) -> Result<Self> {
        let (rows, cols) = features.shape().as_rows_cols();
        if rows != targets.len() {
            return Err(DataError::LengthMismatch {
                rows,
                targets: targets.len(),
            });
        }
        if let Some(i) = features.data().iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: i / cols.max(1),
                column: i % cols.max(1),
            });
        }
        let features = features.reshaped(crate::autodiff::Shape::Matrix(rows, cols));
        Ok(Self {
            name: name.into(),
            features,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Number of features `M`.
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn targets(&self) -> &[bool] {
        &self.targets
    }

    pub fn positives(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.positives() as f64 / self.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Disjoint index sets partitioning `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`; the first `round(n * train_fraction)` indices
/// become the train part.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<Split> {
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(DataError::InvalidParameter(format!(
            "train fraction {} outside [0, 1]",
            spec.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::seeded_rng(spec.seed));
    let cut = (n as f64 * spec.train_fraction).round() as usize;
    let test = idx.split_off(cut);
    Ok(Split { train: idx, test })
}

pub fn train_test_split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let split = split_indices(ds.len(), spec)?;
    Ok((ds.subset(&split.train), ds.subset(&split.test)))
}

/// Fraction of the train split held out for threshold calibration and
/// class-weight tuning.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Splits `train` into (fit, validation) with `fraction` going to validation.
pub fn carve_validation(train: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    train_test_split(
        train,
        SplitSpec {
            train_fraction: 1.0 - fraction,
            seed,
        },
    )
}

/// Per-feature affine map fitted on a train set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for zero-variance columns.
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance columns get mean 0 and std 1 so they pass through
    /// unchanged.
    pub fn fit(ds: &Dataset) -> Self {
        let (n, m) = (ds.len(), ds.dim());
        let x = ds.features();
        let mut mean = vec![0.0; m];
        let mut std = vec![1.0; m];
        if n == 0 {
            return Self { mean, std };
        }
        for j in 0..m {
            let mu = compensated_sum((0..n).map(|i| x.get(i, j))) / n as f64;
            let var = compensated_sum((0..n).map(|i| (x.get(i, j) - mu).powi(2))) / n as f64;
            let sd = var.sqrt();
            if sd > 1e-12 * mu.abs().max(1.0) {
                mean[j] = mu;
                std[j] = sd;
            }
        }
        Self { mean, std }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        let m = ds.dim();
        for (k, v) in out.features.data_mut().iter_mut().enumerate() {
            let j = k % m;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        out
    }
}

/// Fits on `train` and transforms both sets.
pub fn standardize(train: &Dataset, test: &Dataset) -> (Dataset, Dataset, Standardizer) {
    let st = Standardizer::fit(train);
    (st.apply(train), st.apply(test), st)
}

/// A sampled mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub indices: Vec<usize>,
    pub features: Tensor,
    pub targets: Vec<bool>,
}

/// Draws class-stratified batches: `ceil(N/2)` positives then `floor(N/2)`
/// negatives, each uniformly with replacement from its class pool.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    positives: Vec<usize>,
    negatives: Vec<usize>,
    batch_size: usize,
    rng: SeededRng,
}

impl BatchSampler {
    pub fn new(targets: &[bool], batch_size: usize, rng: SeededRng) -> Result<Self> {
        if batch_size == 0 {
            return Err(DataError::InvalidParameter("batch size must be positive".into()));
        }
        let (positives, negatives): (Vec<usize>, Vec<usize>) =
            (0..targets.len()).partition(|&i| targets[i]);
        if positives.is_empty() {
            return Err(DataError::EmptyClass("positive"));
        }
        if negatives.is_empty() {
            return Err(DataError::EmptyClass("negative"));
        }
        Ok(Self {
            positives,
            negatives,
            batch_size,
            rng,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn sample_indices(&mut self) -> Vec<usize> {
        let n_pos = self.batch_size.div_ceil(2);
        let n_neg = self.batch_size / 2;
        let mut out = Vec::with_capacity(self.batch_size);
        for _ in 0..n_pos {
            out.push(self.positives[self.rng.random_range(0..self.positives.len())]);
        }
        for _ in 0..n_neg {
            out.push(self.negatives[self.rng.random_range(0..self.negatives.len())]);
        }
        out
    }

    pub fn sample_batch(&mut self, ds: &Dataset) -> LabeledBatch {
        let indices = self.sample_indices();
        LabeledBatch {
            features: ds.features.select_rows(&indices),
            targets: indices.iter().map(|&i| ds.targets[i]).collect(),
            indices,
        }
    }
}

/// Random labels `y ~ Bernoulli(p)` paired with independent scores
/// `~ N(mu, sigma^2)`.
pub fn synth_universal_batch<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    mu: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(Vec<bool>, Vec<f64>)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DataError::InvalidParameter(format!("p = {p} must lie in (0, 1)")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DataError::InvalidParameter(format!("sigma = {sigma} must be positive")));
    }
    let normal = Normal::new(mu, sigma).map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    let y = (0..n).map(|_| rng.random_bool(p)).collect();
    let s = (0..n).map(|_| normal.sample(rng)).collect();
    Ok((y, s))
}

/// One-feature, two-cluster problem for the threshold model `alpha * x - 1`:
/// negatives `~ N(2, 0.7^2)`, positives `~ N(5, 0.7^2)`, `ceil(n/2)`
/// positives, rows shuffled.
pub fn synth_toy_1d<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    if n < 2 {
        return Err(DataError::InvalidParameter("toy dataset needs n >= 2".into()));
    }
    let neg = Normal::new(2.0, 0.7).unwrap();
    let pos = Normal::new(5.0, 0.7).unwrap();
    let n_pos = n.div_ceil(2);
    let mut rows: Vec<(f64, bool)> = (0..n)
        .map(|i| {
            if i < n_pos {
                (pos.sample(rng), true)
            } else {
                (neg.sample(rng), false)
            }
        })
        .collect();
    rows.shuffle(rng);
    let (x, y): (Vec<f64>, Vec<bool>) = rows.into_iter().unzip();
    Dataset::new("toy-1d", Tensor::matrix(n, 1, x), y)
}

/// Two isotropic Gaussian clusters in `dim` dimensions with unit variance,
/// centred `separation` apart along the all-ones direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    pub n: usize,
    pub dim: usize,
    pub positive_fraction: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            n: 2500,
            dim: 5,
            positive_fraction: 0.5,
            separation: 2.0,
            seed: 0,
        }
    }
}

pub fn synth_clusters(spec: &ClusterSpec) -> Result<Dataset> {
    if spec.dim == 0 || spec.n < 2 {
        return Err(DataError::InvalidParameter("clusters need dim >= 1 and n >= 2".into()));
    }
    if !(spec.positive_fraction > 0.0 && spec.positive_fraction < 1.0) {
        return Err(DataError::InvalidParameter(format!(
            "positive fraction {} must lie in (0, 1)",
            spec.positive_fraction
        )));
    }
    let mut rng = crate::seeded_rng(spec.seed);
    let n_pos = ((spec.n as f64 * spec.positive_fraction).round() as usize).clamp(1, spec.n - 1);
    let shift = spec.separation / (spec.dim as f64).sqrt();
    let mut targets: Vec<bool> = (0..spec.n).map(|i| i < n_pos).collect();
    targets.shuffle(&mut rng);
    let mut data = Vec::with_capacity(spec.n * spec.dim);
    for &t in &targets {
        for _ in 0..spec.dim {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            data.push(if t { z + shift } else { z });
        }
    }
    Dataset::new(
        format!("clusters-{}d", spec.dim),
        Tensor::matrix(spec.n, spec.dim, data),
        targets,
    )
}
