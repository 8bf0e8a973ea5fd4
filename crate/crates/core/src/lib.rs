//! Learned surrogate losses for non-differentiable classification metrics.
//!
//! A prediction network `score(x; alpha)` is trained against a set-wise
//! surrogate network `loss(y, score; beta) = h(mean_i g(y_i, score_i))`,
//! while the surrogate is simultaneously fitted (L1) to the exact,
//! non-differentiable metric on fresh mini-batches. The two updates
//! alternate: `K_alpha` steps on the predictor, then `K_beta` steps on the
//! surrogate, repeated `T` times.
//!
//! Modules:
//! - [`autodiff`]: the reverse-mode tape both networks are trained with.
//! - [`metrics`]: exact evaluators for MCR, AUC, EER, AP, F1, MCC and JAC.
//! - [`nets`]: prediction and surrogate networks, Adam, clipping, checkpoints.
//! - [`data`]: ingestion, splits, stratified sampling, synthetic generators, fetching.
//! - [`training`]: the alternating loop, universal pretraining and baselines.
//! - [`harness`]: experiment grids, reports, threshold calibration, the 1-D demo.

pub mod autodiff;
pub mod data;
pub mod harness;
pub mod metrics;
pub mod nets;
pub mod training;

/// Seeded generator used throughout for reproducible runs.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds a [`SeededRng`] from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
