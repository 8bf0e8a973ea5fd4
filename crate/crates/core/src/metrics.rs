//! Exact binary classification losses.
//!
//! Every evaluator here is the piece-wise constant "true" loss the surrogate
//! is fitted to. Ranking metrics (AUC, AP, EER) use the raw scores; the
//! thresholded ones (MCR, F1, MCC, JAC) first binarize with `score >= gamma`.
//! Similarity metrics are turned into losses as `1 - x`; MCR and EER are
//! already losses.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MetricId {
    Mcr,
    Auc,
    Eer,
    Ap,
    F1,
    Mcc,
    Jac,
}

impl MetricId {
    pub const ALL: [MetricId; 7] = [
        MetricId::Mcr,
        MetricId::Auc,
        MetricId::Eer,
        MetricId::Ap,
        MetricId::F1,
        MetricId::Mcc,
        MetricId::Jac,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricId::Mcr => "MCR",
            MetricId::Auc => "AUC",
            MetricId::Eer => "EER",
            MetricId::Ap => "AP",
            MetricId::F1 => "F1",
            MetricId::Mcc => "MCC",
            MetricId::Jac => "JAC",
        }
    }

    /// Whether the loss depends on the decision threshold.
    pub fn is_thresholded(&self) -> bool {
        matches!(
            self,
            MetricId::Mcr | MetricId::F1 | MetricId::Mcc | MetricId::Jac
        )
    }

    /// Closed interval every loss value lies in.
    pub fn loss_range(&self) -> (f64, f64) {
        match self {
            MetricId::Mcc => (0.0, 2.0),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("metric evaluated on an empty batch")]
    Empty,
    #[error("{0} is undefined without both positive and negative labels")]
    SingleClass(MetricId),
    #[error("{0} does not depend on a threshold")]
    ThresholdFree(MetricId),
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("unknown metric {0:?}; expected one of MCR, AUC, EER, AP, F1, MCC, JAC")]
    UnknownMetric(String),
}

/// Scores binarized at a threshold; ties at the threshold are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedPrediction {
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub labels: Vec<bool>,
}

impl ThresholdedPrediction {
    pub fn new(scores: &[f64], threshold: f64) -> Self {
        Self {
            scores: scores.to_vec(),
            threshold,
            labels: binarize(scores, threshold),
        }
    }
}

pub fn binarize(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn misclassification_rate(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }

    /// F1; 1 when there is nothing to find and nothing was predicted.
    pub fn f1(&self) -> f64 {
        if self.tp + self.fp + self.fn_ == 0 {
            return 1.0;
        }
        2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (
            self.tp as f64,
            self.fp as f64,
            self.tn as f64,
            self.fn_ as f64,
        );
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if denom == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fn_) / denom.sqrt()
    }

    /// Jaccard index; 1 for an empty union.
    pub fn jaccard(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            return 1.0;
        }
        self.tp as f64 / union as f64
    }
}

/// Confusion counts of predicted `labels` against ground truth `y`.
pub fn confusion(y: &[bool], labels: &[bool]) -> ConfusionCounts {
    assert_eq!(y.len(), labels.len(), "confusion of unequal lengths");
    let mut c = ConfusionCounts::default();
    for (&truth, &pred) in y.iter().zip(labels) {
        match (truth, pred) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    c
}

fn check_inputs(y: &[bool], scores: &[f64]) -> Result<(), MetricError> {
    if y.len() != scores.len() {
        return Err(MetricError::LengthMismatch {
            labels: y.len(),
            scores: scores.len(),
        });
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn class_sizes(y: &[bool]) -> (usize, usize) {
    let pos = y.iter().filter(|&&v| v).count();
    (pos, y.len() - pos)
}

fn require_both_classes(metric: MetricId, y: &[bool]) -> Result<(usize, usize), MetricError> {
    let (pos, neg) = class_sizes(y);
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass(metric));
    }
    Ok((pos, neg))
}

/// Loss value of `metric` on one batch.
pub fn true_loss(metric: MetricId, y: &[bool], scores: &[f64], gamma: f64) -> Result<f64, MetricError> {
    check_inputs(y, scores)?;
    let loss = match metric {
        MetricId::Auc => 1.0 - auc(y, scores)?,
        MetricId::Ap => 1.0 - average_precision(y, scores)?,
        MetricId::Eer => equal_error_rate(y, scores)?,
        thresholded => {
            let counts = confusion(y, &binarize(scores, gamma));
            match thresholded {
                MetricId::Mcr => counts.misclassification_rate(),
                MetricId::F1 => 1.0 - counts.f1(),
                MetricId::Mcc => 1.0 - counts.mcc(),
                MetricId::Jac => 1.0 - counts.jaccard(),
                _ => unreachable!(),
            }
        }
    };
    Ok(loss)
}

/// Indices ordered by ascending score.
fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Area under the ROC curve via the Mann-Whitney rank sum; tied
/// positive/negative pairs count one half.
pub fn auc(y: &[bool], scores: &[f64]) -> Result<f64, MetricError> {
    check_inputs(y, scores)?;
    let (pos, neg) = require_both_classes(MetricId::Auc, y)?;
    let order = ascending_order(scores);
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end+1 share their average
        let avg_rank = (start + end + 2) as f64 / 2.0;
        for &i in &order[start..=end] {
            if y[i] {
                rank_sum += avg_rank;
            }
        }
        start = end + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Mean precision at the rank of each positive, scores descending, no
/// interpolation. Tied scores form one threshold step: each positive in a
/// tie group gets the precision at the end of its group.
pub fn average_precision(y: &[bool], scores: &[f64]) -> Result<f64, MetricError> {
    check_inputs(y, scores)?;
    let (pos, _) = require_both_classes(MetricId::Ap, y)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let group_hits = order[start..=end].iter().filter(|&&i| y[i]).count();
        hits += group_hits;
        precision_sum += group_hits as f64 * hits as f64 / (end + 1) as f64;
        start = end + 1;
    }
    Ok(precision_sum / pos as f64)
}

/// ROC operating points `(fpr, tpr)` for every distinct threshold,
/// from `+inf` (nothing positive) down to `-inf` (everything positive).
pub fn roc_points(y: &[bool], scores: &[f64]) -> Result<Vec<(f64, f64)>, MetricError> {
    check_inputs(y, scores)?;
    let (pos, neg) = require_both_classes(MetricId::Eer, y)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Equal error rate on the convex hull of the ROC curve: the operating
/// point where false-positive and false-negative rates coincide when
/// interpolating between thresholds. The hull contains the chance
/// diagonal, so the value never exceeds 0.5.
pub fn equal_error_rate(y: &[bool], scores: &[f64]) -> Result<f64, MetricError> {
    let points = roc_points(y, scores)?;
    let hull = upper_hull(&points);
    // f = fpr + tpr - 1 is -1 at (0,0) and +1 at (1,1), increasing along the hull
    for w in hull.windows(2) {
        let ((x1, y1), (x2, y2)) = (w[0], w[1]);
        let f1 = x1 + y1 - 1.0;
        let f2 = x2 + y2 - 1.0;
        if f1 <= 0.0 && f2 >= 0.0 {
            if f2 == f1 {
                return Ok(x1);
            }
            let t = -f1 / (f2 - f1);
            return Ok(x1 + t * (x2 - x1));
        }
    }
    unreachable!("ROC hull always crosses the equal-error line")
}

/// Upper convex hull of points sorted by ascending x (then y).
fn upper_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    sorted.dedup();
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for p in sorted {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Outcome of a threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub gamma: f64,
    pub loss: f64,
    /// Labels are single-class or every grid value scored the same.
    pub degenerate: bool,
}

/// Grid value minimizing the thresholded loss; ties go to the value
/// closest to zero, then to the smaller one.
pub fn calibrate_threshold(
    metric: MetricId,
    y: &[bool],
    scores: &[f64],
    grid: &[f64],
) -> Result<Calibration, MetricError> {
    if !metric.is_thresholded() {
        return Err(MetricError::ThresholdFree(metric));
    }
    if grid.is_empty() {
        return Err(MetricError::EmptyGrid);
    }
    check_inputs(y, scores)?;
    let mut best: Option<(f64, f64)> = None;
    let mut all_equal = true;
    let mut first_loss = None;
    for &gamma in grid {
        let loss = true_loss(metric, y, scores, gamma)?;
        match first_loss {
            None => first_loss = Some(loss),
            Some(l) if l != loss => all_equal = false,
            _ => {}
        }
        let better = match best {
            None => true,
            Some((bg, bl)) => match loss.total_cmp(&bl) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => {
                    gamma.abs() < bg.abs() || (gamma.abs() == bg.abs() && gamma < bg)
                }
            },
        };
        if better {
            best = Some((gamma, loss));
        }
    }
    let (gamma, loss) = best.expect("grid is non-empty");
    let (pos, neg) = class_sizes(y);
    Ok(Calibration {
        gamma,
        loss,
        degenerate: all_equal || pos == 0 || neg == 0,
    })
}

/// `points` evenly spaced values spanning `[min(scores), max(scores)]`.
pub fn default_grid(scores: &[f64], points: usize) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() || points == 0 {
        return vec![0.0];
    }
    if points == 1 || lo == hi {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    /// Mann-Whitney U counted over every positive/negative pair, in halves.
    fn brute_force_auc(y: &[bool], s: &[f64]) -> f64 {
        let mut halves = 0u64;
        let (mut pos, mut neg) = (0usize, 0usize);
        for i in 0..y.len() {
            if y[i] {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] && !y[j] {
                    if s[i] > s[j] {
                        halves += 2;
                    } else if s[i] == s[j] {
                        halves += 1;
                    }
                }
            }
        }
        (halves as f64 / 2.0) / (pos * neg) as f64
    }

    /// Minimum over all segments between two ROC points of the crossing
    /// with fpr = fnr. Any such chord lies under the hull, so the minimum
    /// is attained on the hull.
    fn brute_force_eer(y: &[bool], s: &[f64]) -> f64 {
        let pts = roc_points(y, s).unwrap();
        let mut best = f64::INFINITY;
        for &(x1, y1) in &pts {
            for &(x2, y2) in &pts {
                let f1 = x1 + y1 - 1.0;
                let f2 = x2 + y2 - 1.0;
                if f1 <= 0.0 && f2 >= 0.0 {
                    let x = if f1 == f2 { x1 } else { x1 + (-f1 / (f2 - f1)) * (x2 - x1) };
                    best = best.min(x);
                }
            }
        }
        best
    }

    #[test]
    fn auc_example() {
        let y = b(&[1, 0, 1, 0]);
        let loss = true_loss(MetricId::Auc, &y, &[0.9, 0.8, 0.7, 0.1], 0.0).unwrap();
        assert_eq!(loss, 0.25);
    }

    #[test]
    fn f1_example() {
        let y = b(&[1, 1, 0]);
        let s = [0.6, -0.2, -0.5];
        let c = confusion(&y, &binarize(&s, 0.0));
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 1));
        let loss = true_loss(MetricId::F1, &y, &s, 0.0).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mcc_example() {
        let y = b(&[1, 1, 0, 0]);
        let loss = true_loss(MetricId::Mcc, &y, &[1.0, 0.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn mcr_boundaries() {
        let y = b(&[1, 0, 1, 0]);
        let s = [1.0, -1.0, 2.0, -3.0];
        assert_eq!(true_loss(MetricId::Mcr, &y, &s, 0.0).unwrap(), 0.0);
        let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(true_loss(MetricId::Mcr, &y, &flipped, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn ap_example() {
        let y = b(&[1, 0, 1]);
        let loss = true_loss(MetricId::Ap, &y, &[0.9, 0.8, 0.7], 0.0).unwrap();
        assert!((loss - 1.0 / 6.0).abs() < 1e-15);
        // the tie at 0.9 is one step: precision 1/2, then 2/3
        let tied = average_precision(&y, &[0.9, 0.9, 0.1]).unwrap();
        assert!((tied - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(tied, average_precision(&b(&[0, 1, 1]), &[0.9, 0.9, 0.1]).unwrap());
    }

    #[test]
    fn eer_example() {
        let y = b(&[1, 0, 1, 0]);
        let s = [0.9, 0.8, 0.7, 0.1];
        assert_eq!(true_loss(MetricId::Eer, &y, &s, 0.0).unwrap(), 0.25);
        assert_eq!(brute_force_eer(&y, &s), 0.25);
    }

    #[test]
    fn eer_perfect_and_inverted() {
        let y = b(&[1, 1, 0, 0]);
        assert_eq!(equal_error_rate(&y, &[2.0, 1.0, 0.0, -1.0]).unwrap(), 0.0);
        // the hull always contains the chance diagonal, so a fully inverted
        // ranking is capped at 0.5
        assert_eq!(equal_error_rate(&y, &[-2.0, -1.0, 0.0, 1.0]).unwrap(), 0.5);
        // all scores tied: the chance diagonal
        assert_eq!(equal_error_rate(&y, &[0.0; 4]).unwrap(), 0.5);
    }

    #[test]
    fn jaccard_example() {
        let y = b(&[1, 1, 0]);
        let loss = true_loss(MetricId::Jac, &y, &[1.0, 0.0, 1.0], 0.5).unwrap();
        assert!((loss - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(
            confusion(&b(&[1, 0]), &b(&[1, 0])),
            ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 }
        );
        assert_eq!(confusion(&b(&[1, 1]), &b(&[0, 0])).fn_, 2);
        let mut rng = seeded_rng(4);
        let y: Vec<bool> = (0..50).map(|_| rng.random()).collect();
        let l: Vec<bool> = (0..50).map(|_| rng.random()).collect();
        assert_eq!(confusion(&y, &l).total(), 50);
    }

    #[test]
    fn degenerate_constants() {
        let neg = b(&[0, 0, 0]);
        let pos = b(&[1, 1, 1]);
        let low = [-1.0, -2.0, -3.0];
        let high = [1.0, 2.0, 3.0];
        // nothing to find, nothing predicted
        assert_eq!(true_loss(MetricId::F1, &neg, &low, 0.0).unwrap(), 0.0);
        assert_eq!(true_loss(MetricId::Jac, &neg, &low, 0.0).unwrap(), 0.0);
        // predicted positives but no actual positives
        assert_eq!(true_loss(MetricId::F1, &neg, &high, 0.0).unwrap(), 1.0);
        assert_eq!(true_loss(MetricId::Jac, &neg, &high, 0.0).unwrap(), 1.0);
        // zero MCC denominators
        assert_eq!(true_loss(MetricId::Mcc, &neg, &low, 0.0).unwrap(), 1.0);
        assert_eq!(true_loss(MetricId::Mcc, &pos, &high, 0.0).unwrap(), 1.0);
        assert_eq!(true_loss(MetricId::Mcr, &pos, &high, 0.0).unwrap(), 0.0);
        for m in [MetricId::Auc, MetricId::Ap, MetricId::Eer] {
            assert_eq!(
                true_loss(m, &pos, &high, 0.0).unwrap_err(),
                MetricError::SingleClass(m)
            );
            assert_eq!(
                true_loss(m, &neg, &high, 0.0).unwrap_err(),
                MetricError::SingleClass(m)
            );
        }
    }

    #[test]
    fn input_errors() {
        assert_eq!(
            true_loss(MetricId::Mcr, &b(&[1]), &[0.0, 1.0], 0.0).unwrap_err(),
            MetricError::LengthMismatch { labels: 1, scores: 2 }
        );
        assert_eq!(true_loss(MetricId::Mcr, &[], &[], 0.0).unwrap_err(), MetricError::Empty);
        assert!("f1".parse::<MetricId>().is_ok());
        assert!("NDCG".parse::<MetricId>().is_err());
    }

    #[test]
    fn auc_matches_brute_force_with_ties() {
        let mut rng = seeded_rng(17);
        for trial in 0..1000 {
            let n = rng.random_range(2..=30);
            let mut y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            y[0] = true;
            y[1] = false;
            // coarse scores force ties on most trials
            let levels = if trial % 2 == 0 { 4 } else { 1000 };
            let s: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
                .collect();
            assert_eq!(auc(&y, &s).unwrap(), brute_force_auc(&y, &s));
        }
    }

    #[test]
    fn eer_matches_chord_oracle() {
        let mut rng = seeded_rng(23);
        for trial in 0..300 {
            let n = rng.random_range(2..=25);
            let mut y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            y[0] = true;
            y[1] = false;
            let levels = if trial % 3 == 0 { 3 } else { 10_000 };
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
            let fast = equal_error_rate(&y, &s).unwrap();
            let slow = brute_force_eer(&y, &s);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn auc_complement_symmetry() {
        let mut rng = seeded_rng(2);
        for _ in 0..100 {
            let n = 20;
            let mut y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            y[0] = true;
            y[1] = false;
            let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let a = auc(&y, &s).unwrap();
            let c = auc(&y, &neg).unwrap();
            assert!((a - (1.0 - c)).abs() < 1e-15);
        }
    }

    #[test]
    fn calibration_examples() {
        let y = b(&[1, 0]);
        let c = calibrate_threshold(MetricId::Mcr, &y, &[0.9, 0.1], &[0.0, 0.5, 1.0]).unwrap();
        // 0.5 is the only zero-loss value: 0.0 marks both positive
        assert_eq!((c.gamma, c.loss), (0.5, 0.0));
        let c = calibrate_threshold(MetricId::Mcr, &y, &[0.9, -0.1], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!((c.gamma, c.loss), (0.0, 0.0));

        let c = calibrate_threshold(MetricId::F1, &y, &[0.9, 0.1], &[0.37]).unwrap();
        assert_eq!(c.gamma, 0.37);

        let neg = b(&[0, 0, 0, 0]);
        let s = [-0.5, 0.2, 0.4, 0.9];
        let grid = default_grid(&s, 101);
        let c = calibrate_threshold(MetricId::F1, &neg, &s, &grid).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.loss, 1.0);
        assert_eq!(c.gamma, grid[grid.iter().map(|g| g.abs()).enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0]);

        assert_eq!(
            calibrate_threshold(MetricId::Auc, &y, &[0.9, 0.1], &[0.0]).unwrap_err(),
            MetricError::ThresholdFree(MetricId::Auc)
        );
        assert_eq!(
            calibrate_threshold(MetricId::F1, &y, &[0.9, 0.1], &[]).unwrap_err(),
            MetricError::EmptyGrid
        );
    }

    #[test]
    fn calibration_tie_prefers_smaller_magnitude_then_smaller_value() {
        let y = b(&[1, 0]);
        let c = calibrate_threshold(MetricId::Mcr, &y, &[2.0, -2.0], &[1.0, -1.0, 0.5]).unwrap();
        assert_eq!(c.gamma, 0.5);
        let c = calibrate_threshold(MetricId::Mcr, &y, &[2.0, -2.0], &[1.0, -1.0]).unwrap();
        assert_eq!(c.gamma, -1.0);
    }

    #[test]
    fn default_grid_spans_scores() {
        let g = default_grid(&[0.5, -1.0, 3.0], 101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[100], 3.0);
    }

    proptest! {
        #[test]
        fn losses_are_permutation_invariant_and_bounded(
            raw in prop::collection::vec((any::<bool>(), -3.0f64..3.0), 2..40),
            gamma in -1.0f64..1.0,
            seed in any::<u64>(),
            coarse in any::<bool>(),
        ) {
            let mut y: Vec<bool> = raw.iter().map(|r| r.0).collect();
            // coarse scores force ties
            let s: Vec<f64> = raw.iter().map(|r| if coarse { r.1.round() } else { r.1 }).collect();
            y[0] = true;
            y[1] = false;
            let mut order: Vec<usize> = (0..y.len()).collect();
            order.shuffle(&mut seeded_rng(seed));
            let yp: Vec<bool> = order.iter().map(|&i| y[i]).collect();
            let sp: Vec<f64> = order.iter().map(|&i| s[i]).collect();
            for m in MetricId::ALL {
                let a = true_loss(m, &y, &s, gamma).unwrap();
                let c = true_loss(m, &yp, &sp, gamma).unwrap();
                prop_assert!((a - c).abs() < 1e-12, "{} {} {}", m, a, c);
                let (lo, hi) = m.loss_range();
                prop_assert!(a >= lo && a <= hi && a.is_finite());
            }
        }
    }
}
