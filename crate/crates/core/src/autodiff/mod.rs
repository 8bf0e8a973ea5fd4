//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! addressed through [`Var`] handles; [`Tape::backward`] replays the recorded
//! rules in reverse order and accumulates `d root / d node` for every node
//! that (transitively) depends on a gradient-carrying leaf.
//!
//! The op set is exactly what the prediction and surrogate networks need:
//! dense layers, leaky rectifier, batch normalization, dropout, mean pooling
//! over the row (set) axis, column concatenation, elementwise arithmetic,
//! absolute value, reductions and the two fused baseline losses.
//!
//! A tape is meant to live for a single training step. Drop it (or call
//! [`Tape::clear`]) before the next one.

mod tensor;

use matrixmultiply::dgemm;
use rand::Rng;
use thiserror::Error;

pub use tensor::{compensated_sum, Shape, Tensor};
use tensor::column_sums;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("backward root must hold a single value, got shape {0}")]
    NonScalarRoot(Shape),
    #[error("mean pooling over an empty set")]
    EmptyPool,
    #[error("batch normalization in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropoutRate(f64),
    #[error("pairwise loss needs at least one positive and one negative")]
    NoPairs,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Whether stochastic / batch-dependent layers run in training or inference form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

/// Running mean / variance kept by a batch normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Weight of the previous running value in each update.
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

enum Op {
    Leaf,
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        // false when normalizing with constant running statistics
        batch_stats: bool,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    MeanRows {
        input: Var,
    },
    ConcatCols {
        left: Var,
        right: Var,
    },
    Reshape {
        input: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Abs {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Affine {
        input: Var,
        scale: f64,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<bool>,
        pos_weight: f64,
    },
    PairwiseHinge {
        scores: Var,
        positives: Vec<usize>,
        negatives: Vec<usize>,
        margin: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node; outstanding [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    /// A leaf whose gradient is tracked (parameters).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant (inputs, detached values).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Accumulated gradient of `var`; zeros when nothing reached it.
    pub fn grad(&self, var: Var) -> Tensor {
        let shape = self.nodes[var.0].value.shape();
        match self.grads.get(var.0) {
            Some(g) if !g.is_empty() => Tensor::new(shape, g.clone()),
            _ => Tensor::zeros(shape),
        }
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `input · weight + bias`. A vector input is treated as one row and
    /// yields a vector.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let in_shape = self.shape(input);
        let w_shape = self.shape(weight);
        let b_shape = self.shape(bias);
        let (n, d_in) = match in_shape {
            Shape::Scalar => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "dense",
                    left: in_shape,
                    right: w_shape,
                })
            }
            s => s.as_rows_cols(),
        };
        let d_out = match w_shape {
            Shape::Matrix(r, c) if r == d_in => c,
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "dense",
                    left: in_shape,
                    right: w_shape,
                })
            }
        };
        if b_shape.numel() != d_out || matches!(b_shape, Shape::Matrix(..)) {
            return Err(AutodiffError::ShapeMismatch {
                op: "dense bias",
                left: w_shape,
                right: b_shape,
            });
        }
        let bias_data = self.value(bias).data();
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(bias_data);
        }
        gemm(
            n,
            d_in,
            d_out,
            self.value(input).data(),
            (d_in as isize, 1),
            self.value(weight).data(),
            (d_out as isize, 1),
            &mut out,
        );
        let shape = match in_shape {
            Shape::Vector(_) => Shape::Vector(d_out),
            _ => Shape::Matrix(n, d_out),
        };
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(shape, out),
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let x = self.value(input);
        let out: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = x.shape();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::new(shape, out), Op::LeakyRelu { input, slope }, rg)
    }

    /// Batch normalization over the row axis of an `N x D` input.
    ///
    /// Train mode normalizes with the (biased) batch statistics,
    /// differentiates through them and updates `stats`. Eval mode
    /// normalizes with `stats`, which are treated as constants.
    pub fn batchnorm(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let x_shape = self.shape(input);
        let (n, d) = match x_shape {
            Shape::Matrix(n, d) => (n, d),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "batchnorm",
                    left: x_shape,
                    right: self.shape(scale),
                })
            }
        };
        for v in [scale, shift] {
            if self.shape(v).numel() != d {
                return Err(AutodiffError::ShapeMismatch {
                    op: "batchnorm",
                    left: x_shape,
                    right: self.shape(v),
                });
            }
        }
        if stats.mean.len() != d {
            return Err(AutodiffError::ShapeMismatch {
                op: "batchnorm running stats",
                left: x_shape,
                right: Shape::Vector(stats.mean.len()),
            });
        }
        let x = self.value(input).data();
        let (mean, inv_std): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(AutodiffError::BatchTooSmall(n));
                }
                let nf = n as f64;
                let mean: Vec<f64> = column_sums(x, n, d).into_iter().map(|s| s / nf).collect();
                let mut sq = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        let dev = x[r * d + c] - mean[c];
                        sq[r * d + c] = dev * dev;
                    }
                }
                let var: Vec<f64> = column_sums(&sq, n, d).into_iter().map(|s| s / nf).collect();
                let m = stats.momentum;
                for c in 0..d {
                    stats.mean[c] = m * stats.mean[c] + (1.0 - m) * mean[c];
                    let unbiased = var[c] * nf / (nf - 1.0);
                    stats.var[c] = m * stats.var[c] + (1.0 - m) * unbiased;
                }
                let inv_std = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => {
                let inv_std = stats
                    .var
                    .iter()
                    .map(|v| 1.0 / (v + stats.eps).sqrt())
                    .collect();
                (stats.mean.clone(), inv_std)
            }
        };
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let mut normalized = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                let i = r * d + c;
                let z = (x[i] - mean[c]) * inv_std[c];
                normalized[i] = z;
                out[i] = gamma[c] * z + beta[c];
            }
        }
        let rg = self.any_grad(&[input, scale, shift]);
        Ok(self.push(
            Tensor::matrix(n, d, out),
            Op::BatchNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            rg,
        ))
    }

    /// Inverted dropout: in train mode each entry is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`. Identity in eval mode.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidDropoutRate(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = x.shape();
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::new(shape, out), Op::Dropout { input, mask }, rg))
    }

    /// Column means of an `N x Q` matrix, giving a length-`Q` vector.
    pub fn mean_pool_rows(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input);
        let (n, q) = match shape {
            Shape::Matrix(n, q) => (n, q),
            Shape::Vector(q) => (1, q),
            Shape::Scalar => (1, 1),
        };
        if n == 0 {
            return Err(AutodiffError::EmptyPool);
        }
        let sums = column_sums(self.value(input).data(), n, q);
        let out = sums.into_iter().map(|s| s / n as f64).collect();
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::vector(out), Op::MeanRows { input }, rg))
    }

    /// Places two matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, left: Var, right: Var) -> Result<Var> {
        let (ls, rs) = (self.shape(left), self.shape(right));
        let (n, a) = ls.as_rows_cols();
        let (m, b) = rs.as_rows_cols();
        if n != m || !matches!(ls, Shape::Matrix(..)) || !matches!(rs, Shape::Matrix(..)) {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                left: ls,
                right: rs,
            });
        }
        let (l, r) = (self.value(left).data(), self.value(right).data());
        let mut out = Vec::with_capacity(n * (a + b));
        for i in 0..n {
            out.extend_from_slice(&l[i * a..(i + 1) * a]);
            out.extend_from_slice(&r[i * b..(i + 1) * b]);
        }
        let rg = self.any_grad(&[left, right]);
        Ok(self.push(
            Tensor::matrix(n, a + b, out),
            Op::ConcatCols { left, right },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: Shape) -> Result<Var> {
        let from = self.shape(input);
        if from.numel() != shape.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                left: from,
                right: shape,
            });
        }
        let value = self.value(input).clone().reshaped(shape);
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op: op_name,
                left: sa,
                right: sb,
            });
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(sa, out), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise `|x|`; the subgradient at 0 is 0.
    pub fn abs(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = x.data().iter().map(|v| v.abs()).collect();
        let shape = x.shape();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::new(shape, out), Op::Abs { input }, rg)
    }

    /// `|a - target|` for a constant target.
    pub fn abs_diff_const(&mut self, a: Var, target: f64) -> Result<Var> {
        let t = self.constant(Tensor::filled(self.shape(a), target));
        let d = self.sub(a, t)?;
        Ok(self.abs(d))
    }

    /// `scale * x + offset` with constant coefficients.
    pub fn affine(&mut self, input: Var, scale: f64, offset: f64) -> Var {
        let x = self.value(input);
        let out = x.data().iter().map(|v| scale * v + offset).collect();
        let shape = x.shape();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::new(shape, out), Op::Affine { input, scale }, rg)
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = compensated_sum(self.value(input).data().iter().copied());
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    /// Mean of all entries as a scalar.
    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len().max(1) as f64;
        let s = self.sum(input);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// with the positive-class term weighted by `pos_weight`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[bool], pos_weight: f64) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.numel() != targets.len() || targets.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "bce_with_logits",
                left: shape,
                right: Shape::Vector(targets.len()),
            });
        }
        let terms = self
            .value(logits)
            .data()
            .iter()
            .zip(targets)
            .map(|(&s, &y)| {
                if y {
                    pos_weight * softplus(-s)
                } else {
                    softplus(s)
                }
            });
        let loss = compensated_sum(terms) / targets.len() as f64;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                pos_weight,
            },
            rg,
        ))
    }

    /// Mean over all positive/negative pairs of `max(0, margin - (s_pos - s_neg))`.
    pub fn pairwise_hinge(&mut self, scores: Var, targets: &[bool], margin: f64) -> Result<Var> {
        let shape = self.shape(scores);
        if shape.numel() != targets.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "pairwise_hinge",
                left: shape,
                right: Shape::Vector(targets.len()),
            });
        }
        let positives: Vec<usize> = (0..targets.len()).filter(|&i| targets[i]).collect();
        let negatives: Vec<usize> = (0..targets.len()).filter(|&i| !targets[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            return Err(AutodiffError::NoPairs);
        }
        let s = self.value(scores).data();
        let terms = positives.iter().flat_map(|&p| {
            negatives
                .iter()
                .map(move |&q| (margin - (s[p] - s[q])).max(0.0))
        });
        let loss = compensated_sum(terms) / (positives.len() * negatives.len()) as f64;
        let rg = self.any_grad(&[scores]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::PairwiseHinge {
                scores,
                positives,
                negatives,
                margin,
            },
            rg,
        ))
    }

    /// Accumulates `d root / d node` into every gradient-carrying node
    /// recorded up to `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_shape = self.shape(root);
        if root_shape.numel() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_shape));
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize_with(self.nodes.len(), Vec::new);
        }
        self.ensure_grad(root.0);
        self.grads[root.0][0] += 1.0;
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || self.grads[i].is_empty() {
                continue;
            }
            let upstream = std::mem::take(&mut self.grads[i]);
            self.propagate(i, &upstream);
            self.grads[i] = upstream;
        }
        Ok(())
    }

    fn ensure_grad(&mut self, id: usize) {
        if self.grads[id].is_empty() {
            self.grads[id] = vec![0.0; self.nodes[id].value.len()];
        }
    }

    fn propagate(&mut self, id: usize, up: &[f64]) {
        let Tape { nodes, grads } = self;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (n, d_in) = nodes[input.0].value.shape().as_rows_cols();
                let d_out = nodes[weight.0].value.shape().as_rows_cols().1;
                let w = nodes[weight.0].value.data();
                if let Some(g) = slot(nodes, grads, *input) {
                    // dX += dY · W^T
                    gemm(n, d_out, d_in, up, (d_out as isize, 1), w, (1, d_out as isize), g);
                }
                let x = nodes[input.0].value.data();
                if let Some(g) = slot(nodes, grads, *weight) {
                    // dW += X^T · dY
                    gemm(d_in, n, d_out, x, (1, d_in as isize), up, (d_out as isize, 1), g);
                }
                if let Some(g) = slot(nodes, grads, *bias) {
                    for (gi, s) in g.iter_mut().zip(column_sums(up, n, d_out)) {
                        *gi += s;
                    }
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = nodes[input.0].value.data();
                if let Some(g) = slot(nodes, grads, *input) {
                    for ((gi, &u), &xi) in g.iter_mut().zip(up).zip(x) {
                        *gi += if xi > 0.0 { u } else { slope * u };
                    }
                }
            }
            Op::BatchNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let (n, d) = nodes[input.0].value.shape().as_rows_cols();
                let gamma = nodes[scale.0].value.data();
                let mut sum_up = vec![0.0; d];
                let mut sum_up_z = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        let i = r * d + c;
                        sum_up[c] += up[i];
                        sum_up_z[c] += up[i] * normalized[i];
                    }
                }
                if let Some(g) = slot(nodes, grads, *scale) {
                    for c in 0..d {
                        g[c] += sum_up_z[c];
                    }
                }
                if let Some(g) = slot(nodes, grads, *shift) {
                    for c in 0..d {
                        g[c] += sum_up[c];
                    }
                }
                if let Some(g) = slot(nodes, grads, *input) {
                    let nf = n as f64;
                    for r in 0..n {
                        for c in 0..d {
                            let i = r * d + c;
                            g[i] += if *batch_stats {
                                gamma[c] * inv_std[c] / nf
                                    * (nf * up[i] - sum_up[c] - normalized[i] * sum_up_z[c])
                            } else {
                                gamma[c] * inv_std[c] * up[i]
                            };
                        }
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(g) = slot(nodes, grads, *input) {
                    for ((gi, &u), &m) in g.iter_mut().zip(up).zip(mask) {
                        *gi += u * m;
                    }
                }
            }
            Op::MeanRows { input } => {
                let shape = nodes[input.0].value.shape();
                let (n, q) = match shape {
                    Shape::Matrix(n, q) => (n, q),
                    s => (1, s.numel()),
                };
                if let Some(g) = slot(nodes, grads, *input) {
                    let inv = 1.0 / n as f64;
                    for r in 0..n {
                        for c in 0..q {
                            g[r * q + c] += up[c] * inv;
                        }
                    }
                }
            }
            Op::ConcatCols { left, right } => {
                let (n, a) = nodes[left.0].value.shape().as_rows_cols();
                let b = nodes[right.0].value.shape().as_rows_cols().1;
                if let Some(g) = slot(nodes, grads, *left) {
                    for r in 0..n {
                        for c in 0..a {
                            g[r * a + c] += up[r * (a + b) + c];
                        }
                    }
                }
                if let Some(g) = slot(nodes, grads, *right) {
                    for r in 0..n {
                        for c in 0..b {
                            g[r * b + c] += up[r * (a + b) + a + c];
                        }
                    }
                }
            }
            Op::Reshape { input } => {
                if let Some(g) = slot(nodes, grads, *input) {
                    accumulate(g, up, 1.0);
                }
            }
            Op::Add(a, b) => {
                if let Some(g) = slot(nodes, grads, *a) {
                    accumulate(g, up, 1.0);
                }
                if let Some(g) = slot(nodes, grads, *b) {
                    accumulate(g, up, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = slot(nodes, grads, *a) {
                    accumulate(g, up, 1.0);
                }
                if let Some(g) = slot(nodes, grads, *b) {
                    accumulate(g, up, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let va = nodes[a.0].value.data();
                let vb = nodes[b.0].value.data();
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((gi, &u), &y) in g.iter_mut().zip(up).zip(vb) {
                        *gi += u * y;
                    }
                }
                if let Some(g) = slot(nodes, grads, *b) {
                    for ((gi, &u), &x) in g.iter_mut().zip(up).zip(va) {
                        *gi += u * x;
                    }
                }
            }
            Op::Abs { input } => {
                let x = nodes[input.0].value.data();
                if let Some(g) = slot(nodes, grads, *input) {
                    for ((gi, &u), &xi) in g.iter_mut().zip(up).zip(x) {
                        let sign = if xi > 0.0 {
                            1.0
                        } else if xi < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *gi += u * sign;
                    }
                }
            }
            Op::Sum { input } => {
                if let Some(g) = slot(nodes, grads, *input) {
                    g.iter_mut().for_each(|gi| *gi += up[0]);
                }
            }
            Op::Affine { input, scale } => {
                if let Some(g) = slot(nodes, grads, *input) {
                    accumulate(g, up, *scale);
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                pos_weight,
            } => {
                let s = nodes[logits.0].value.data();
                let inv = up[0] / targets.len() as f64;
                if let Some(g) = slot(nodes, grads, *logits) {
                    for ((gi, &si), &y) in g.iter_mut().zip(s).zip(targets) {
                        let p = sigmoid(si);
                        *gi += inv * if y { pos_weight * (p - 1.0) } else { p };
                    }
                }
            }
            Op::PairwiseHinge {
                scores,
                positives,
                negatives,
                margin,
            } => {
                let s = nodes[scores.0].value.data();
                let inv = up[0] / (positives.len() * negatives.len()) as f64;
                if let Some(g) = slot(nodes, grads, *scores) {
                    for &p in positives {
                        for &q in negatives {
                            if margin - (s[p] - s[q]) > 0.0 {
                                g[p] -= inv;
                                g[q] += inv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient buffer of `var` if it carries gradients.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Vec<f64>], var: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[var.0].requires_grad {
        return None;
    }
    let g = &mut grads[var.0];
    if g.is_empty() {
        *g = vec![0.0; nodes[var.0].value.len()];
    }
    Some(g)
}

fn accumulate(g: &mut [f64], up: &[f64], factor: f64) {
    for (gi, &u) in g.iter_mut().zip(up) {
        *gi += factor * u;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `c += a · b` for row-major operands given as (row stride, col stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the stride pairs describe in-bounds views of `a` (m x k),
    // `b` (k x n) and `c` (m x n); the callers derive them from tensor shapes.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
