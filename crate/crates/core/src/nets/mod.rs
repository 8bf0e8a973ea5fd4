//! The two parametric models: a prediction network producing one raw score
//! per row, and a set-wise surrogate loss `h(mean_i g(y_i, score_i))`.

mod adam;
mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Mode, RunningStats, Shape, Tape, Tensor, Var};

pub use adam::{clip_gradients, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError, ModelKind};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("input has {got} features but the network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("surrogate evaluated on an empty batch")]
    EmptyBatch,
    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(String),
    #[error("gradient block {block} has {got} values, parameter has {expected}")]
    GradientShape {
        block: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Named parameter blocks in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    blocks: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.blocks.push(value);
        self.blocks.len() - 1
    }

    pub fn blocks(&self) -> &[Tensor] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Tensor] {
        &mut self.blocks
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of blocks.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.blocks.iter().map(Tensor::len).sum()
    }

    /// Registers every block on `tape` as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.blocks.iter().map(|b| tape.param(b.clone())).collect()
    }

    /// Reads the gradients of previously bound blocks.
    pub fn gradients(&self, tape: &Tape, vars: &[Var]) -> Gradients {
        Gradients {
            names: self.names.clone(),
            blocks: vars.iter().map(|&v| tape.grad(v).into_data()).collect(),
        }
    }

    /// FNV-1a over the bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        fnv1a(self.blocks.iter().flat_map(|b| b.data().iter().copied()))
    }
}

pub(crate) fn fnv1a(values: impl Iterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Per-block gradients aligned with a [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub names: Vec<String>,
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Self {
        let names = (0..blocks.len()).map(|i| format!("block{i}")).collect();
        Self { names, blocks }
    }

    pub fn global_norm(&self) -> f64 {
        crate::autodiff::compensated_sum(self.blocks.iter().flatten().map(|g| g * g)).sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.blocks.iter_mut().flatten() {
            *g *= factor;
        }
    }

    pub fn count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

/// A model producing one raw score per input row.
pub trait ScoreModel {
    fn params(&self) -> &Params;
    fn params_mut(&mut self) -> &mut Params;
    fn input_dim(&self) -> usize;

    /// Records the forward pass for the rows of `x` and returns the
    /// length-`N` score vector. `vars` come from `self.params().bind(tape)`.
    fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var>;

    /// Checksum of parameters and any non-trainable state.
    fn state_checksum(&self) -> u64 {
        self.params().checksum()
    }

    /// Eval-mode scores, detached from any tape.
    fn predict(&mut self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params().bind(&mut tape);
        let xv = tape.constant(x.clone());
        // eval mode draws no random numbers
        let mut rng = crate::seeded_rng(0);
        let s = self.forward(&mut tape, &vars, xv, Mode::Eval, &mut rng)?;
        Ok(tape.value(s).data().to_vec())
    }
}

fn check_width(expected: usize, x: &Tensor) -> Result<()> {
    let got = match x.shape() {
        Shape::Matrix(_, c) => c,
        s => s.as_rows_cols().1,
    };
    if got != expected {
        return Err(NetError::InputWidth { expected, got });
    }
    Ok(())
}

/// Kaiming-normal weights with standard deviation `sqrt(2 / fan_in)`.
fn kaiming<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(fan_in, fan_out, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionArch {
    /// Hidden layer widths; a single-score output layer follows.
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl Default for PredictionArch {
    fn default() -> Self {
        Self {
            hidden: vec![100, 30, 10],
            leaky_slope: 0.01,
            dropout: 0.2,
        }
    }
}

/// Multi-layer perceptron `x -> score`. Each hidden layer is
/// dense, leaky rectifier, batch normalization, dropout; the output layer is
/// a plain dense map to one unbounded score.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionNet {
    input_dim: usize,
    arch: PredictionArch,
    params: Params,
    stats: Vec<RunningStats>,
}

impl PredictionNet {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, arch: PredictionArch, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || arch.hidden.contains(&0) {
            return Err(NetError::Architecture(format!(
                "zero width in input {input_dim} / hidden {:?}",
                arch.hidden
            )));
        }
        if !(0.0..1.0).contains(&arch.dropout) {
            return Err(AutodiffError::InvalidDropoutRate(arch.dropout).into());
        }
        let mut net = Self {
            input_dim,
            params: Params::new(),
            stats: arch.hidden.iter().map(|&w| RunningStats::new(w)).collect(),
            arch,
        };
        net.init_params(rng);
        Ok(net)
    }

    /// Re-draws all parameters: Kaiming-normal weights, zero biases, unit
    /// batchnorm scales and zero shifts. Running statistics are reset.
    pub fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut params = Params::new();
        let mut fan_in = self.input_dim;
        for (l, &w) in self.arch.hidden.iter().enumerate() {
            params.push(format!("hidden{l}.weight"), kaiming(fan_in, w, rng));
            params.push(format!("hidden{l}.bias"), Tensor::zeros(Shape::Vector(w)));
            params.push(format!("hidden{l}.bn_scale"), Tensor::filled(Shape::Vector(w), 1.0));
            params.push(format!("hidden{l}.bn_shift"), Tensor::zeros(Shape::Vector(w)));
            fan_in = w;
        }
        params.push("output.weight", kaiming(fan_in, 1, rng));
        params.push("output.bias", Tensor::zeros(Shape::Vector(1)));
        self.params = params;
        self.stats = self.arch.hidden.iter().map(|&w| RunningStats::new(w)).collect();
    }

    pub fn arch(&self) -> &PredictionArch {
        &self.arch
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.arch.hidden);
        w.push(1);
        w
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Prediction,
            seed,
            widths: self.widths().iter().map(|&w| w as u32).collect(),
            encoder_layers: 0,
            leaky_slope: self.arch.leaky_slope,
            dropout: self.arch.dropout,
            blocks: self.params.blocks().iter().map(|b| b.data().to_vec()).collect(),
            buffers: self
                .stats
                .iter()
                .flat_map(|s| [s.mean.clone(), s.var.clone()])
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Prediction)?;
        let widths: Vec<usize> = ck.widths.iter().map(|&w| w as usize).collect();
        if widths.len() < 2 || *widths.last().unwrap() != 1 {
            return Err(NetError::Architecture(format!("bad widths {widths:?}")));
        }
        let arch = PredictionArch {
            hidden: widths[1..widths.len() - 1].to_vec(),
            leaky_slope: ck.leaky_slope,
            dropout: ck.dropout,
        };
        let mut net = Self::new(widths[0], arch, &mut crate::seeded_rng(0))?;
        ck.fill_params(&mut net.params)?;
        if ck.buffers.len() != 2 * net.stats.len() {
            return Err(CheckpointError::Layout("running statistics".into()).into());
        }
        for (s, pair) in net.stats.iter_mut().zip(ck.buffers.chunks(2)) {
            if pair[0].len() != s.mean.len() || pair[1].len() != s.var.len() {
                return Err(CheckpointError::Layout("running statistics".into()).into());
            }
            s.mean = pair[0].clone();
            s.var = pair[1].clone();
        }
        Ok(net)
    }
}

impl ScoreModel for PredictionNet {
    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        check_width(self.input_dim, tape.value(x))?;
        let n = tape.value(x).rows();
        let mut h = x;
        for (l, stats) in self.stats.iter_mut().enumerate() {
            let p = &vars[4 * l..4 * l + 4];
            h = tape.dense(h, p[0], p[1])?;
            h = tape.leaky_relu(h, self.arch.leaky_slope);
            h = tape.batchnorm(h, p[2], p[3], stats, mode)?;
            h = tape.dropout(h, self.arch.dropout, mode, rng)?;
        }
        let k = 4 * self.arch.hidden.len();
        let out = tape.dense(h, vars[k], vars[k + 1])?;
        Ok(tape.reshape(out, Shape::Vector(n))?)
    }

    fn state_checksum(&self) -> u64 {
        let p = self.params.checksum();
        let s = fnv1a(self.stats.iter().flat_map(|s| s.mean.iter().chain(&s.var).copied()));
        p ^ s.rotate_left(1)
    }
}

/// One-parameter model `score = alpha * x - 1` on a single feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearThreshold {
    params: Params,
}

impl LinearThreshold {
    pub fn new(alpha: f64) -> Self {
        let mut params = Params::new();
        params.push("alpha", Tensor::matrix(1, 1, vec![alpha]));
        Self { params }
    }

    pub fn alpha(&self) -> f64 {
        self.params.blocks()[0].item()
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.params.blocks_mut()[0].data_mut()[0] = alpha;
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::LinearThreshold,
            seed,
            widths: vec![1, 1],
            encoder_layers: 0,
            leaky_slope: 0.0,
            dropout: 0.0,
            blocks: vec![vec![self.alpha()]],
            buffers: Vec::new(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::LinearThreshold)?;
        let mut m = Self::new(0.0);
        ck.fill_params(&mut m.params)?;
        Ok(m)
    }
}

impl ScoreModel for LinearThreshold {
    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        _mode: Mode,
        _rng: &mut R,
    ) -> Result<Var> {
        check_width(1, tape.value(x))?;
        let n = tape.value(x).rows();
        let offset = tape.constant(Tensor::vector(vec![-1.0]));
        let s = tape.dense(x, vars[0], offset)?;
        Ok(tape.reshape(s, Shape::Vector(n))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateArch {
    /// Widths of the per-instance encoder `g: R^2 -> R^Q`.
    pub encoder: Vec<usize>,
    /// Widths of the set-level head `h: R^Q -> R`; must end in 1.
    pub head: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for SurrogateArch {
    fn default() -> Self {
        Self {
            encoder: vec![30, 30],
            head: vec![10, 10, 1],
            leaky_slope: 0.01,
        }
    }
}

/// Permutation-invariant loss network `h(mean_i g(y_i, score_i))`.
///
/// Every encoder layer and every head layer but the last apply a leaky
/// rectifier; the output is an unconstrained real.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateNet {
    arch: SurrogateArch,
    params: Params,
}

impl SurrogateNet {
    pub fn new<R: Rng + ?Sized>(arch: SurrogateArch, rng: &mut R) -> Result<Self> {
        if arch.encoder.is_empty() || arch.encoder.contains(&0) {
            return Err(NetError::Architecture(format!("encoder widths {:?}", arch.encoder)));
        }
        if arch.head.last() != Some(&1) || arch.head.contains(&0) {
            return Err(NetError::Architecture(format!(
                "head widths {:?} must end in 1",
                arch.head
            )));
        }
        let mut net = Self {
            arch,
            params: Params::new(),
        };
        net.init_params(rng);
        Ok(net)
    }

    pub fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut params = Params::new();
        let mut fan_in = 2;
        for (l, &w) in self.arch.encoder.iter().enumerate() {
            params.push(format!("g{l}.weight"), kaiming(fan_in, w, rng));
            params.push(format!("g{l}.bias"), Tensor::zeros(Shape::Vector(w)));
            fan_in = w;
        }
        for (l, &w) in self.arch.head.iter().enumerate() {
            params.push(format!("h{l}.weight"), kaiming(fan_in, w, rng));
            params.push(format!("h{l}.bias"), Tensor::zeros(Shape::Vector(w)));
            fan_in = w;
        }
        self.params = params;
    }

    pub fn arch(&self) -> &SurrogateArch {
        &self.arch
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Width `Q` of the pooled set representation.
    pub fn embedding_width(&self) -> usize {
        *self.arch.encoder.last().unwrap()
    }

    /// Records `h(mean_i g(y_i, score_i))` and returns the scalar node.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], y: &[bool], scores: Var) -> Result<Var> {
        let n = tape.value(scores).len();
        if n != y.len() {
            return Err(NetError::LengthMismatch {
                labels: y.len(),
                scores: n,
            });
        }
        if n == 0 {
            return Err(NetError::EmptyBatch);
        }
        let labels = tape.constant(Tensor::matrix(
            n,
            1,
            y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        ));
        let column = tape.reshape(scores, Shape::Matrix(n, 1))?;
        let mut h = tape.concat_cols(labels, column)?;
        let slope = self.arch.leaky_slope;
        let enc = self.arch.encoder.len();
        for l in 0..enc {
            h = tape.dense(h, vars[2 * l], vars[2 * l + 1])?;
            h = tape.leaky_relu(h, slope);
        }
        h = tape.mean_pool_rows(h)?;
        let heads = self.arch.head.len();
        for l in 0..heads {
            let k = 2 * (enc + l);
            h = tape.dense(h, vars[k], vars[k + 1])?;
            if l + 1 < heads {
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok(tape.reshape(h, Shape::Scalar)?)
    }

    /// Surrogate value for one batch, detached.
    pub fn evaluate(&self, y: &[bool], scores: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let s = tape.constant(Tensor::vector(scores.to_vec()));
        let out = self.forward(&mut tape, &vars, y, s)?;
        Ok(tape.value(out).item())
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut widths = vec![2u32];
        widths.extend(self.arch.encoder.iter().map(|&w| w as u32));
        widths.extend(self.arch.head.iter().map(|&w| w as u32));
        Checkpoint {
            kind: ModelKind::Surrogate,
            seed,
            widths,
            encoder_layers: self.arch.encoder.len() as u32,
            leaky_slope: self.arch.leaky_slope,
            dropout: 0.0,
            blocks: self.params.blocks().iter().map(|b| b.data().to_vec()).collect(),
            buffers: Vec::new(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Surrogate)?;
        let enc = ck.encoder_layers as usize;
        let widths: Vec<usize> = ck.widths.iter().map(|&w| w as usize).collect();
        if widths.first() != Some(&2) || widths.len() < enc + 2 {
            return Err(NetError::Architecture(format!("bad widths {widths:?}")));
        }
        let arch = SurrogateArch {
            encoder: widths[1..=enc].to_vec(),
            head: widths[enc + 1..].to_vec(),
            leaky_slope: ck.leaky_slope,
        };
        let mut net = Self::new(arch, &mut crate::seeded_rng(0))?;
        ck.fill_params(&mut net.params)?;
        Ok(net)
    }
}
