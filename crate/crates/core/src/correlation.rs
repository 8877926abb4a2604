//! Pairwise lagged correlation across metric pairs: best-lag Pearson (or
//! Spearman) per pair, the full N*(N-1)/2 edge set with a lag-0 matrix, and
//! lead/lag precedence chains derived from significant non-zero lags.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::MetricSeries;
use crate::stats;

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("series `{0}` is constant")]
    ConstantSeries(String),
    #[error("series too short: need more than {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrMethod {
    Pearson,
    Spearman,
}

/// Correlation of two series at the lag that maximizes |r|.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LagCorrelation {
    /// Positive lag means the second series lags the first.
    pub best_lag: i64,
    pub r: f64,
    pub r_by_lag: Vec<(i64, f64)>,
}

fn corr_window(a: &[f64], b: &[f64], method: CorrMethod) -> Option<f64> {
    match method {
        CorrMethod::Pearson => stats::pearson(a, b),
        CorrMethod::Spearman => stats::pearson(&stats::ranks(a), &stats::ranks(b)),
    }
}

/// Pearson (or Spearman) r between `a[0..n-l)` and `b[l..n)` for every lag
/// `l` in `[-max_lag, max_lag]`; `best_lag` maximizes |r|, ties broken
/// toward smaller |l| and then the negative lag. Windows where either side
/// is constant contribute r = 0.
pub fn cross_correlate(
    a: &MetricSeries,
    b: &MetricSeries,
    max_lag: usize,
    method: CorrMethod,
) -> Result<LagCorrelation, CorrelationError> {
    let n = a.len().min(b.len());
    if n <= 2 * max_lag + 2 {
        return Err(CorrelationError::TooShort {
            needed: 2 * max_lag + 2,
            got: n,
        });
    }
    for s in [a, b] {
        if stats::pop_std(&s.values[..n]) == 0.0 {
            return Err(CorrelationError::ConstantSeries(s.name.clone()));
        }
    }

    let r_at = |lag: i64| -> f64 {
        let (xa, xb) = if lag >= 0 {
            let l = lag as usize;
            (&a.values[..n - l], &b.values[l..n])
        } else {
            let l = (-lag) as usize;
            (&a.values[l..n], &b.values[..n - l])
        };
        corr_window(xa, xb, method).unwrap_or(0.0)
    };

    let mut r_by_lag: Vec<(i64, f64)> = Vec::with_capacity(2 * max_lag + 1);
    for lag in -(max_lag as i64)..=max_lag as i64 {
        r_by_lag.push((lag, r_at(lag)));
    }

    // tie-break order: |l| ascending, negative before positive
    let mut best = (0i64, r_at(0));
    for l in 1..=max_lag as i64 {
        for lag in [-l, l] {
            let r = r_at(lag);
            if r.abs() > best.1.abs() + 1e-15 {
                best = (lag, r);
            }
        }
    }

    Ok(LagCorrelation {
        best_lag: best.0,
        r: best.1,
        r_by_lag,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationEdge {
    pub metric_a: String,
    pub metric_b: String,
    /// r at the best lag; 0 for degenerate (constant) pairs.
    pub r: f64,
    pub best_lag: i64,
    pub significant: bool,
    /// True when either side was constant and no r could be computed.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeadLagChain {
    pub metrics: Vec<String>,
    /// False for cyclic or direction-free components (unordered clusters).
    pub ordered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metrics: Vec<String>,
    pub edges: Vec<CorrelationEdge>,
    /// Symmetric r-at-lag-0 matrix in `metrics` order; diagonal 1 for
    /// non-constant metrics, 0 for constant ones.
    pub matrix: Vec<Vec<f64>>,
    pub lead_lag_chains: Vec<LeadLagChain>,
    pub max_lag: usize,
    pub r_threshold: f64,
    pub method: CorrMethod,
}

/// Evaluate all canonical pairs (a < b lexicographically). Constant metrics
/// stay in the report as degenerate zero edges so the edge count is always
/// exactly N*(N-1)/2. `max_lag` is clamped per pair so short series never
/// error.
pub fn correlation_matrix(
    series_set: &[&MetricSeries],
    max_lag: usize,
    r_threshold: f64,
    method: CorrMethod,
) -> CorrelationReport {
    let mut ordered: Vec<&MetricSeries> = series_set.to_vec();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));
    let names: Vec<String> = ordered.iter().map(|s| s.name.clone()).collect();
    let n = ordered.len();

    let mut matrix = vec![vec![0.0; n]; n];
    for (i, s) in ordered.iter().enumerate() {
        if stats::pop_std(&s.values) > 0.0 {
            matrix[i][i] = 1.0;
        }
    }

    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let a = ordered[i];
            let b = ordered[j];
            let len = a.len().min(b.len());
            let effective_lag = if len > 3 { max_lag.min((len - 3) / 2) } else { 0 };
            match cross_correlate(a, b, effective_lag, method) {
                Ok(lc) => {
                    let r0 = lc
                        .r_by_lag
                        .iter()
                        .find(|(l, _)| *l == 0)
                        .map(|(_, r)| *r)
                        .unwrap_or(0.0);
                    matrix[i][j] = r0;
                    matrix[j][i] = r0;
                    edges.push(CorrelationEdge {
                        metric_a: names[i].clone(),
                        metric_b: names[j].clone(),
                        r: lc.r,
                        best_lag: lc.best_lag,
                        significant: lc.r.abs() >= r_threshold,
                        degenerate: false,
                    });
                }
                Err(_) => {
                    edges.push(CorrelationEdge {
                        metric_a: names[i].clone(),
                        metric_b: names[j].clone(),
                        r: 0.0,
                        best_lag: 0,
                        significant: false,
                        degenerate: true,
                    });
                }
            }
        }
    }

    let lead_lag_chains = lead_lag_order(&edges);
    CorrelationReport {
        metrics: names,
        edges,
        matrix,
        lead_lag_chains,
        max_lag,
        r_threshold,
        method,
    }
}

/// Order metrics by lag precedence. Significant edges connect components;
/// edges with a non-zero best lag direct leader -> lagger. A component is
/// an ordered chain only when a unique topological order exists; cyclic or
/// direction-free components come back as unordered clusters (sorted by
/// name).
pub fn lead_lag_order(edges: &[CorrelationEdge]) -> Vec<LeadLagChain> {
    use std::collections::{BTreeMap, BTreeSet};

    let significant: Vec<&CorrelationEdge> = edges.iter().filter(|e| e.significant).collect();
    if significant.is_empty() {
        return Vec::new();
    }

    // union-find over metrics touched by significant edges
    let mut parent: BTreeMap<String, String> = BTreeMap::new();
    fn find(parent: &mut BTreeMap<String, String>, x: &str) -> String {
        let p = parent.get(x).cloned().unwrap_or_else(|| x.to_string());
        if p == x {
            return p;
        }
        let root = find(parent, &p);
        parent.insert(x.to_string(), root.clone());
        root
    }
    for e in &significant {
        parent.entry(e.metric_a.clone()).or_insert_with(|| e.metric_a.clone());
        parent.entry(e.metric_b.clone()).or_insert_with(|| e.metric_b.clone());
        let ra = find(&mut parent, &e.metric_a);
        let rb = find(&mut parent, &e.metric_b);
        if ra != rb {
            parent.insert(ra, rb);
        }
    }

    // directed edges from non-zero lags: positive lag = b lags a = a leads b
    let mut succ: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in &significant {
        if e.best_lag > 0 {
            succ.entry(e.metric_a.clone()).or_default().insert(e.metric_b.clone());
        } else if e.best_lag < 0 {
            succ.entry(e.metric_b.clone()).or_default().insert(e.metric_a.clone());
        }
    }

    let mut components: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let keys: Vec<String> = parent.keys().cloned().collect();
    for name in keys {
        let root = find(&mut parent, &name);
        components.entry(root).or_default().insert(name);
    }

    let mut chains = Vec::new();
    for members in components.values() {
        let mut indegree: BTreeMap<&String, usize> = members.iter().map(|m| (m, 0)).collect();
        for (from, tos) in &succ {
            if !members.contains(from) {
                continue;
            }
            for to in tos {
                if let Some(d) = indegree.get_mut(to) {
                    *d += 1;
                }
            }
        }
        // Kahn with a uniqueness requirement: exactly one candidate each step
        let mut remaining = indegree.clone();
        let mut order = Vec::new();
        let mut unique = true;
        while !remaining.is_empty() {
            let ready: Vec<&String> = remaining
                .iter()
                .filter(|(_, &d)| d == 0)
                .map(|(m, _)| *m)
                .collect();
            if ready.is_empty() {
                unique = false; // cycle
                break;
            }
            if ready.len() > 1 {
                unique = false;
                break;
            }
            let next = ready[0].clone();
            remaining.remove(&next);
            if let Some(tos) = succ.get(&next) {
                for to in tos {
                    if let Some(d) = remaining.get_mut(to) {
                        *d -= 1;
                    }
                }
            }
            order.push(next);
        }
        if unique && members.len() > 1 {
            chains.push(LeadLagChain {
                metrics: order,
                ordered: true,
            });
        } else if members.len() > 1 {
            chains.push(LeadLagChain {
                metrics: members.iter().cloned().collect(),
                ordered: false,
            });
        }
    }
    chains
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(name: &str, values: Vec<f64>) -> MetricSeries {
        MetricSeries::new(name, 0, 1, values)
    }

    fn impulse(n: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        v
    }

    #[test]
    fn recovers_planted_shift() {
        let a = series("a", impulse(30, 10));
        let b = series("b", impulse(30, 13));
        let lc = cross_correlate(&a, &b, 5, CorrMethod::Pearson).unwrap();
        assert_eq!(lc.best_lag, 3);
        assert!((lc.r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_and_sign() {
        let vals: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64).collect();
        let a = series("a", vals.clone());
        let b = series("b", vals.clone());
        let lc = cross_correlate(&a, &b, 5, CorrMethod::Pearson).unwrap();
        assert_eq!(lc.best_lag, 0);
        assert!((lc.r - 1.0).abs() < 1e-9);

        let c = series("c", vals.iter().map(|v| -v).collect());
        let lc = cross_correlate(&a, &c, 5, CorrMethod::Pearson).unwrap();
        assert_eq!(lc.best_lag, 0);
        assert!((lc.r + 1.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let a = series("a", vec![1.0; 30]);
        let b = series("b", (0..30).map(f64::from).collect());
        assert!(matches!(
            cross_correlate(&a, &b, 5, CorrMethod::Pearson),
            Err(CorrelationError::ConstantSeries(_))
        ));
        let short = series("s", vec![1.0, 2.0, 3.0]);
        let short2 = series("t", vec![3.0, 2.0, 1.0]);
        assert!(matches!(
            cross_correlate(&short, &short2, 5, CorrMethod::Pearson),
            Err(CorrelationError::TooShort { .. })
        ));
    }

    #[test]
    fn matrix_edge_count_and_identity_pair() {
        let vals: Vec<f64> = (0..40).map(|i| ((i * 3) % 13) as f64).collect();
        let a = series("a", vals.clone());
        let b = series("b", vals.clone());
        let report = correlation_matrix(&[&a, &b], 5, 0.7, CorrMethod::Pearson);
        assert_eq!(report.edges.len(), 1);
        assert_eq!(report.edges[0].best_lag, 0);
        assert!((report.edges[0].r - 1.0).abs() < 1e-9);
        assert!((report.matrix[0][1] - 1.0).abs() < 1e-9);
        assert_eq!(report.matrix[0][0], 1.0);
    }

    #[test]
    fn constant_metric_gets_degenerate_edges() {
        let a = series("a", (0..40).map(f64::from).collect());
        let c = series("c", vec![5.0; 40]);
        let report = correlation_matrix(&[&a, &c], 5, 0.7, CorrMethod::Pearson);
        assert_eq!(report.edges.len(), 1);
        assert!(report.edges[0].degenerate);
        assert_eq!(report.matrix[1][1], 0.0); // constant diagonal
    }

    fn shifted_chain() -> (MetricSeries, MetricSeries, MetricSeries) {
        // c = b shifted +2 = a shifted +5
        let n = 120;
        let base: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7).sin()).collect();
        let shift = |by: usize| -> Vec<f64> {
            let mut v = vec![0.0; n];
            for i in by..n {
                v[i] = base[i - by];
            }
            v
        };
        (
            series("a", base.clone()),
            series("b", shift(3)),
            series("c", shift(5)),
        )
    }

    #[test]
    fn lead_lag_chain_recovered() {
        let (a, b, c) = shifted_chain();
        let report = correlation_matrix(&[&c, &a, &b], 10, 0.7, CorrMethod::Pearson);
        assert_eq!(report.edges.len(), 3);
        let chains = &report.lead_lag_chains;
        assert_eq!(chains.len(), 1);
        assert!(chains[0].ordered);
        assert_eq!(chains[0].metrics, vec!["a", "b", "c"]);
    }

    #[test]
    fn no_significant_edges_no_chains() {
        assert!(lead_lag_order(&[]).is_empty());
        let edges = vec![CorrelationEdge {
            metric_a: "a".into(),
            metric_b: "b".into(),
            r: 0.2,
            best_lag: 3,
            significant: false,
            degenerate: false,
        }];
        assert!(lead_lag_order(&edges).is_empty());
    }

    #[test]
    fn zero_lag_pair_is_unordered_cluster() {
        let edges = vec![CorrelationEdge {
            metric_a: "a".into(),
            metric_b: "b".into(),
            r: 0.95,
            best_lag: 0,
            significant: true,
            degenerate: false,
        }];
        let chains = lead_lag_order(&edges);
        assert_eq!(chains.len(), 1);
        assert!(!chains[0].ordered);
        assert_eq!(chains[0].metrics, vec!["a", "b"]);
    }

    #[test]
    fn cycle_is_unordered_cluster() {
        let edge = |a: &str, b: &str, lag: i64| CorrelationEdge {
            metric_a: a.into(),
            metric_b: b.into(),
            r: 0.9,
            best_lag: lag,
            significant: true,
            degenerate: false,
        };
        // a -> b, b -> c, c -> a
        let chains = lead_lag_order(&[edge("a", "b", 1), edge("b", "c", 1), edge("a", "c", -1)]);
        assert_eq!(chains.len(), 1);
        assert!(!chains[0].ordered);
        assert_eq!(chains[0].metrics.len(), 3);
    }

    #[test]
    fn edge_count_property_small_n() {
        for n in 2..12usize {
            let set: Vec<MetricSeries> = (0..n)
                .map(|j| {
                    series(
                        &format!("m{j:02}"),
                        (0..30).map(|i| ((i + j) as f64 * 0.9).cos()).collect(),
                    )
                })
                .collect();
            let refs: Vec<&MetricSeries> = set.iter().collect();
            let report = correlation_matrix(&refs, 3, 0.7, CorrMethod::Pearson);
            assert_eq!(report.edges.len(), n * (n - 1) / 2);
        }
    }

    proptest! {
        #[test]
        fn lag_antisymmetry(vals in proptest::collection::vec(-100.0f64..100.0, 40..80), shift in 0usize..5) {
            let n = vals.len();
            let a = series("a", vals.clone());
            let mut shifted = vec![0.0; n];
            for i in shift..n {
                shifted[i] = vals[i - shift];
            }
            let b = series("b", shifted);
            let fwd = cross_correlate(&a, &b, 8, CorrMethod::Pearson);
            let rev = cross_correlate(&b, &a, 8, CorrMethod::Pearson);
            if let (Ok(f), Ok(r)) = (fwd, rev) {
                prop_assert_eq!(f.best_lag, -r.best_lag);
                prop_assert!((f.r.abs() - r.r.abs()).abs() < 1e-9);
            }
        }

        #[test]
        fn r_invariant_under_positive_affine(
            vals in proptest::collection::vec(-100.0f64..100.0, 30..60),
            a_scale in 0.1f64..10.0, a_shift in -50.0f64..50.0,
        ) {
            let x = series("x", vals.clone());
            let y = series("y", vals.iter().rev().cloned().collect());
            let y2 = series("y", y.values.iter().map(|v| a_scale * v + a_shift).collect());
            let r1 = cross_correlate(&x, &y, 5, CorrMethod::Pearson);
            let r2 = cross_correlate(&x, &y2, 5, CorrMethod::Pearson);
            if let (Ok(r1), Ok(r2)) = (r1, r2) {
                prop_assert_eq!(r1.best_lag, r2.best_lag);
                prop_assert!((r1.r - r2.r).abs() < 1e-9);
            }
        }
    }
}
