//! Offline mean-shift change-point detection via binary segmentation with a
//! BIC-style penalty, plus cross-metric vote aggregation that surfaces
//! system-level shifts only when enough metrics agree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::MetricSeries;
use crate::stats;

#[derive(Debug, Error)]
pub enum ChangepointError {
    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// One detected change point. `index` is the first sample of the new
/// regime; `score` is the cost reduction in units of the penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    pub index: usize,
    pub delta_mean: f64,
    pub score: f64,
}

/// Prefix-sum helper for within-segment squared-deviation costs.
struct SegmentCost {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl SegmentCost {
    fn new(values: &[f64]) -> SegmentCost {
        let mut sum = vec![0.0; values.len() + 1];
        let mut sum_sq = vec![0.0; values.len() + 1];
        for (i, &v) in values.iter().enumerate() {
            sum[i + 1] = sum[i] + v;
            sum_sq[i + 1] = sum_sq[i] + v * v;
        }
        SegmentCost { sum, sum_sq }
    }

    /// Sum of squared deviations from the segment mean over [lo, hi).
    fn cost(&self, lo: usize, hi: usize) -> f64 {
        let n = (hi - lo) as f64;
        if n == 0.0 {
            return 0.0;
        }
        let s = self.sum[hi] - self.sum[lo];
        let sq = self.sum_sq[hi] - self.sum_sq[lo];
        (sq - s * s / n).max(0.0)
    }

    fn mean(&self, lo: usize, hi: usize) -> f64 {
        (self.sum[hi] - self.sum[lo]) / (hi - lo) as f64
    }

    /// Best single split of [lo, hi): (split index, cost reduction).
    fn best_split(&self, lo: usize, hi: usize) -> Option<(usize, f64)> {
        if hi - lo < 2 {
            return None;
        }
        let whole = self.cost(lo, hi);
        let mut best: Option<(usize, f64)> = None;
        for s in (lo + 1)..hi {
            let reduction = whole - self.cost(lo, s) - self.cost(s, hi);
            match best {
                Some((_, r)) if reduction <= r => {}
                _ => best = Some((s, reduction)),
            }
        }
        best
    }
}

/// BIC-style default penalty: `2 * variance(series) * ln(n)`.
pub fn default_penalty(values: &[f64]) -> f64 {
    2.0 * stats::pop_variance(values) * (values.len() as f64).ln()
}

/// Binary segmentation minimizing within-segment squared deviations: the
/// split with the largest cost reduction is accepted while the reduction
/// exceeds `penalty` (pass None for the BIC-style default), recursing into
/// subsegments best-first until nothing qualifies or `max_cp` is reached.
pub fn detect_changepoints(
    series: &MetricSeries,
    penalty: Option<f64>,
    max_cp: usize,
) -> Result<Vec<ChangePoint>, ChangepointError> {
    let values = &series.values;
    if values.len() < 20 {
        return Err(ChangepointError::TooShort {
            needed: 20,
            got: values.len(),
        });
    }
    let penalty = penalty.unwrap_or_else(|| default_penalty(values));
    let cost = SegmentCost::new(values);

    // candidate segments with their best split, picked best-first
    let mut candidates: Vec<(usize, usize, usize, f64)> = Vec::new(); // (lo, hi, split, reduction)
    if let Some((s, r)) = cost.best_split(0, values.len()) {
        candidates.push((0, values.len(), s, r));
    }
    let mut accepted: Vec<(usize, f64)> = Vec::new(); // (index, reduction)
    while accepted.len() < max_cp && !candidates.is_empty() {
        let best_pos = candidates
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.3.partial_cmp(&b.3).unwrap().then(b.2.cmp(&a.2)))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, split, reduction) = candidates.swap_remove(best_pos);
        if reduction <= penalty || reduction <= 0.0 {
            // best-first: nothing later can beat this reduction within [lo,hi),
            // but other candidates may still qualify
            continue;
        }
        accepted.push((split, reduction));
        if let Some((s, r)) = cost.best_split(lo, split) {
            candidates.push((lo, split, s, r));
        }
        if let Some((s, r)) = cost.best_split(split, hi) {
            candidates.push((split, hi, s, r));
        }
    }

    accepted.sort_by_key(|(i, _)| *i);
    let mut boundaries = vec![0];
    boundaries.extend(accepted.iter().map(|(i, _)| *i));
    boundaries.push(values.len());

    let result = accepted
        .iter()
        .enumerate()
        .map(|(k, &(index, reduction))| {
            let before = cost.mean(boundaries[k], index);
            let after = cost.mean(index, boundaries[k + 2]);
            ChangePoint {
                index,
                delta_mean: after - before,
                score: if penalty > 0.0 {
                    reduction / penalty
                } else {
                    f64::INFINITY
                },
            }
        })
        .collect();
    Ok(result)
}

/// A cross-metric voted change point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotedChangePoint {
    pub window_center_index: usize,
    /// Distinct contributing metrics over total analyzed metrics.
    pub vote_fraction: f64,
    pub contributing_metrics: Vec<String>,
}

/// Cluster change points across metrics by single linkage at distance <=
/// `vote_window` samples; emit clusters whose distinct-metric vote fraction
/// reaches `min_vote_fraction`. Cluster centers are median indices.
pub fn vote_aggregate(
    per_metric: &BTreeMap<String, Vec<ChangePoint>>,
    vote_window: usize,
    min_vote_fraction: f64,
) -> Vec<VotedChangePoint> {
    let total_metrics = per_metric.len();
    if total_metrics == 0 {
        return Vec::new();
    }
    let mut points: Vec<(usize, &str)> = Vec::new();
    for (metric, cps) in per_metric {
        for cp in cps {
            points.push((cp.index, metric.as_str()));
        }
    }
    if points.is_empty() {
        return Vec::new();
    }
    points.sort();

    let mut voted = Vec::new();
    let mut cluster_start = 0;
    for i in 1..=points.len() {
        let boundary =
            i == points.len() || points[i].0 - points[i - 1].0 > vote_window;
        if !boundary {
            continue;
        }
        let cluster = &points[cluster_start..i];
        cluster_start = i;

        let indices: Vec<usize> = cluster.iter().map(|(idx, _)| *idx).collect();
        let mid = indices.len() / 2;
        let center = if indices.len() % 2 == 1 {
            indices[mid]
        } else {
            (indices[mid - 1] + indices[mid]) / 2
        };
        let mut metrics: Vec<String> = cluster.iter().map(|(_, m)| m.to_string()).collect();
        metrics.sort();
        metrics.dedup();
        let fraction = metrics.len() as f64 / total_metrics as f64;
        if fraction >= min_vote_fraction {
            voted.push(VotedChangePoint {
                window_center_index: center,
                vote_fraction: fraction,
                contributing_metrics: metrics,
            });
        }
    }
    voted
}
