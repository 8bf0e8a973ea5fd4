//! Result tables with per-metric average ranks and win counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{RunResult, RunStatus};
use crate::metrics::MetricId;

/// 1-based ranks of `losses`, lower is better, ties share their average rank.
pub fn average_ranks(losses: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    let mut ranks = vec![0.0; losses.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && losses[order[j + 1]] == losses[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mean test loss per (dataset, metric, method) over successful seeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub datasets: Vec<String>,
    pub metrics: Vec<MetricId>,
    pub methods: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<MetricId, BTreeMap<String, f64>>>,
}

impl ReportTable {
    pub fn from_results(results: &[RunResult]) -> Self {
        let mut sums: BTreeMap<(String, MetricId, String), (f64, usize)> = BTreeMap::new();
        let mut datasets = Vec::new();
        let mut metrics = BTreeSet::new();
        let mut methods = Vec::new();
        for r in results {
            let RunStatus::Ok { test_loss, .. } = &r.status else {
                continue;
            };
            if !datasets.contains(&r.dataset) {
                datasets.push(r.dataset.clone());
            }
            let method = r.method.to_string();
            if !methods.contains(&method) {
                methods.push(method.clone());
            }
            metrics.insert(r.metric);
            let e = sums.entry((r.dataset.clone(), r.metric, method)).or_default();
            e.0 += test_loss;
            e.1 += 1;
        }
        let mut cells: BTreeMap<String, BTreeMap<MetricId, BTreeMap<String, f64>>> = BTreeMap::new();
        for ((d, m, method), (s, n)) in sums {
            cells.entry(d).or_default().entry(m).or_default().insert(method, s / n as f64);
        }
        Self {
            datasets,
            metrics: metrics.into_iter().collect(),
            methods,
            cells,
        }
    }

    pub fn cell(&self, dataset: &str, metric: MetricId, method: &str) -> Option<f64> {
        self.cells.get(dataset)?.get(&metric)?.get(method).copied()
    }

    /// Methods with a value in every dataset of this metric column.
    fn complete_methods(&self, metric: MetricId) -> Vec<&str> {
        self.methods
            .iter()
            .map(String::as_str)
            .filter(|m| self.datasets.iter().all(|d| self.cell(d, metric, m).is_some()))
            .collect()
    }

    /// Average over datasets of each method's rank within the metric column.
    /// Only methods with a result on every dataset are ranked.
    pub fn ranks(&self, metric: MetricId) -> BTreeMap<String, f64> {
        let methods = self.complete_methods(metric);
        let mut total: BTreeMap<String, f64> = BTreeMap::new();
        if methods.is_empty() || self.datasets.is_empty() {
            return total;
        }
        for d in &self.datasets {
            let losses: Vec<f64> = methods.iter().map(|m| self.cell(d, metric, m).unwrap()).collect();
            for (m, r) in methods.iter().zip(average_ranks(&losses)) {
                *total.entry(m.to_string()).or_default() += r;
            }
        }
        for v in total.values_mut() {
            *v /= self.datasets.len() as f64;
        }
        total
    }

    /// Number of datasets on which each method attains the lowest loss of
    /// the metric column; tied minima all count.
    pub fn wins(&self, metric: MetricId) -> BTreeMap<String, usize> {
        let methods = self.complete_methods(metric);
        let mut wins: BTreeMap<String, usize> = methods.iter().map(|m| (m.to_string(), 0)).collect();
        for d in &self.datasets {
            let best = methods
                .iter()
                .map(|m| self.cell(d, metric, m).unwrap())
                .fold(f64::INFINITY, f64::min);
            for m in &methods {
                if self.cell(d, metric, m) == Some(best) {
                    *wins.get_mut(*m).unwrap() += 1;
                }
            }
        }
        wins
    }

    /// Markdown table: one row per dataset, one column per (metric, method),
    /// lowest loss per metric in bold, then `Ranks` and `Wins` rows.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut header = String::from("| Dataset |");
        let mut rule = String::from("|---|");
        for m in &self.metrics {
            for method in &self.methods {
                let _ = write!(header, " {m} {method} |");
                rule.push_str("---|");
            }
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for d in &self.datasets {
            let _ = write!(out, "| {d} |");
            for &m in &self.metrics {
                let best = self
                    .methods
                    .iter()
                    .filter_map(|x| self.cell(d, m, x))
                    .fold(f64::INFINITY, f64::min);
                for method in &self.methods {
                    match self.cell(d, m, method) {
                        Some(v) if v == best => {
                            let _ = write!(out, " **{v:.4}** |");
                        }
                        Some(v) => {
                            let _ = write!(out, " {v:.4} |");
                        }
                        None => out.push_str(" - |"),
                    }
                }
            }
            out.push('\n');
        }
        for (label, is_rank) in [("Ranks", true), ("Wins", false)] {
            let _ = write!(out, "| {label} |");
            for &m in &self.metrics {
                let ranks = self.ranks(m);
                let wins = self.wins(m);
                for method in &self.methods {
                    let cell = if is_rank {
                        ranks.get(method).map(|r| format!("{r:.2}"))
                    } else {
                        wins.get(method).map(|w| w.to_string())
                    };
                    let _ = write!(out, " {} |", cell.unwrap_or_else(|| "-".into()));
                }
            }
            out.push('\n');
        }
        out
    }
}
