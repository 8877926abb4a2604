//! Anomaly detection over metric series: z-score, Tukey-fence IQR, and an
//! isolation forest built from scratch, plus a rule that picks a detector
//! per series and a PCA reconstruction-error score that combines several
//! metrics into one anomaly view.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::preprocess::MetricSeries;
use crate::stats;

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("fewer than 2 non-constant metrics")]
    DegenerateInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Zscore,
    Iqr,
    IsolationForest,
}

/// Per-metric anomaly finding: flagged sample indices with their scores and
/// the detector plus threshold that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFinding {
    pub metric: String,
    pub indices: Vec<usize>,
    pub timestamps: Vec<i64>,
    pub scores: Vec<f64>,
    pub detector: Detector,
    pub threshold_used: f64,
}

impl AnomalyFinding {
    fn new(series: &MetricSeries, detector: Detector, threshold: f64) -> AnomalyFinding {
        AnomalyFinding {
            metric: series.name.clone(),
            indices: Vec::new(),
            timestamps: Vec::new(),
            scores: Vec::new(),
            detector,
            threshold_used: threshold,
        }
    }

    fn push(&mut self, series: &MetricSeries, index: usize, score: f64) {
        self.indices.push(index);
        self.timestamps.push(series.timestamp_at(index));
        self.scores.push(score);
    }
}

/// Flag samples with |x - mean| / std above `threshold`, using the
/// population standard deviation; a constant series yields no findings.
pub fn zscore_detect(series: &MetricSeries, threshold: f64) -> AnomalyFinding {
    let mut finding = AnomalyFinding::new(series, Detector::Zscore, threshold);
    let std = stats::pop_std(&series.values);
    if std == 0.0 {
        return finding;
    }
    let mean = stats::mean(&series.values);
    for (i, &v) in series.values.iter().enumerate() {
        let z = (v - mean).abs() / std;
        if z > threshold {
            finding.push(series, i, z);
        }
    }
    finding
}

/// Tukey-fence detector: flag values beyond `Q1 - k*IQR` / `Q3 + k*IQR`
/// with type-7 quartiles; score is the distance beyond the fence in IQR
/// units. A zero IQR yields no findings.
pub fn iqr_detect(series: &MetricSeries, k: f64) -> Result<AnomalyFinding, AnomalyError> {
    if series.len() < 4 {
        return Err(AnomalyError::TooShort {
            needed: 4,
            got: series.len(),
        });
    }
    let mut finding = AnomalyFinding::new(series, Detector::Iqr, k);
    let mut sorted = series.values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = stats::quantile_sorted(&sorted, 0.25);
    let q3 = stats::quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    if iqr == 0.0 {
        return Ok(finding);
    }
    let lo = q1 - k * iqr;
    let hi = q3 + k * iqr;
    for (i, &v) in series.values.iter().enumerate() {
        if v < lo {
            finding.push(series, i, (lo - v) / iqr);
        } else if v > hi {
            finding.push(series, i, (v - hi) / iqr);
        }
    }
    Ok(finding)
}

// --- isolation forest -------------------------------------------------

/// c(n): average unsuccessful-search path length in a BST of n nodes,
/// the normalizer in the isolation-forest anomaly score.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n
}

fn harmonic(x: f64) -> f64 {
    // Euler-Mascheroni approximation, standard in isolation-forest scoring
    x.ln() + 0.577_215_664_901_532_9
}

enum Node {
    Leaf { size: usize },
    Split { dim: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

fn build_tree(
    data: &[Vec<f64>],
    indices: &mut [usize],
    depth: usize,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> Node {
    if indices.len() <= 1 || depth >= max_depth {
        return Node::Leaf { size: indices.len() };
    }
    let dims = data[0].len();
    // dimensions that still have spread in this node
    let splittable: Vec<usize> = (0..dims)
        .filter(|&d| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in indices.iter() {
                lo = lo.min(data[i][d]);
                hi = hi.max(data[i][d]);
            }
            hi > lo
        })
        .collect();
    if splittable.is_empty() {
        return Node::Leaf { size: indices.len() };
    }
    let dim = splittable[rng.random_range(0..splittable.len())];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in indices.iter() {
        lo = lo.min(data[i][dim]);
        hi = hi.max(data[i][dim]);
    }
    let value = rng.random_range(lo..hi);
    let mid = itertools_partition(indices, |&i| data[i][dim] < value);
    let (left_idx, right_idx) = indices.split_at_mut(mid);
    let left = build_tree(data, left_idx, depth + 1, max_depth, rng);
    let right = build_tree(data, right_idx, depth + 1, max_depth, rng);
    Node::Split {
        dim,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Stable-order partition; returns the split point.
fn itertools_partition<T, F: Fn(&T) -> bool>(slice: &mut [T], pred: F) -> usize {
    let mut split = 0;
    for i in 0..slice.len() {
        if pred(&slice[i]) {
            slice.swap(split, i);
            split += 1;
        }
    }
    split
}

fn path_length(node: &Node, point: &[f64], depth: usize) -> f64 {
    match node {
        Node::Leaf { size } => depth as f64 + average_path_length(*size),
        Node::Split { dim, value, left, right } => {
            if point[*dim] < *value {
                path_length(left, point, depth + 1)
            } else {
                path_length(right, point, depth + 1)
            }
        }
    }
}

/// Isolation-forest anomaly scores in (0, 1) for each row of `data`
/// (n points x d dims). Each tree draws a subsample of up to `subsample`
/// points, splits on a random dimension at a uniform value between the node
/// min and max, and stops at height ceil(log2(subsample)). The score is
/// `2^(-E[h(x)] / c(psi))`. Tree randomness derives from `seed + tree
/// index`, so results are reproducible regardless of evaluation order.
pub fn isolation_forest_scores(
    data: &[Vec<f64>],
    n_trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<Vec<f64>, AnomalyError> {
    if data.len() < 8 {
        return Err(AnomalyError::TooShort { needed: 8, got: data.len() });
    }
    let psi = subsample.min(data.len()).max(2);
    let max_depth = (psi as f64).log2().ceil() as usize;
    let c = average_path_length(psi);
    let mut path_sums = vec![0.0; data.len()];
    for tree_idx in 0..n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(tree_idx as u64));
        let mut indices = sample_without_replacement(data.len(), psi, &mut rng);
        let tree = build_tree(data, &mut indices, 0, max_depth, &mut rng);
        for (i, point) in data.iter().enumerate() {
            path_sums[i] += path_length(&tree, point, 0);
        }
    }
    let scores = path_sums
        .iter()
        .map(|&sum| {
            let mean_path = sum / n_trees as f64;
            2f64.powf(-mean_path / c)
        })
        .collect();
    Ok(scores)
}

fn sample_without_replacement(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    // partial Fisher-Yates
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool
}

#[derive(Debug, Clone, Copy)]
pub struct ForestParams {
    pub n_trees: usize,
    pub subsample: usize,
    pub score_threshold: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            subsample: 256,
            score_threshold: 0.6,
            seed: 42,
        }
    }
}

/// Univariate isolation-forest detection over one series.
pub fn isolation_forest_detect(
    series: &MetricSeries,
    params: &ForestParams,
) -> Result<AnomalyFinding, AnomalyError> {
    let data: Vec<Vec<f64>> = series.values.iter().map(|&v| vec![v]).collect();
    let scores = isolation_forest_scores(&data, params.n_trees, params.subsample, params.seed)?;
    let mut finding =
        AnomalyFinding::new(series, Detector::IsolationForest, params.score_threshold);
    for (i, &s) in scores.iter().enumerate() {
        if s > params.score_threshold {
            finding.push(series, i, s);
        }
    }
    Ok(finding)
}

/// Pick a detector for a series: short series get the robust IQR rule,
/// near-Gaussian series get the z-score, anything heavy-tailed or skewed
/// gets the isolation forest.
pub fn select_detector(series: &MetricSeries) -> Detector {
    if series.len() < 50 {
        return Detector::Iqr;
    }
    let skew = stats::skewness(&series.values);
    let kurt = stats::excess_kurtosis(&series.values);
    if skew.abs() < 1.0 && kurt.abs() < 1.0 {
        Detector::Zscore
    } else {
        Detector::IsolationForest
    }
}

/// Cross-metric anomaly view: standardized PCA reconstruction error per
/// timestamp over a set of metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedAnomalyFinding {
    pub metrics: Vec<String>,
    /// Metrics excluded because they had zero variance.
    pub dropped_metrics: Vec<String>,
    pub components: usize,
    pub timestamps: Vec<i64>,
    /// Squared reconstruction error, standardized over the experiment.
    pub combined_scores: Vec<f64>,
    /// Sample indices whose standardized score exceeds 3.
    pub top_k: Vec<usize>,
}

/// PCA-combined scoring over equal-grid, gap-filled series. Each metric is
/// standardized (zero-variance metrics dropped with a warning entry); the
/// covariance eigendecomposition keeps the top `components` axes
/// (default min(3, m)) and the per-timestamp squared reconstruction error,
/// standardized, is the combined score.
pub fn combined_pca_score(
    series_set: &[&MetricSeries],
    components: Option<usize>,
) -> Result<CombinedAnomalyFinding, AnomalyError> {
    let mut kept: Vec<&MetricSeries> = Vec::new();
    let mut dropped = Vec::new();
    for s in series_set {
        if stats::pop_std(&s.values) == 0.0 {
            dropped.push(s.name.clone());
        } else {
            kept.push(s);
        }
    }
    if kept.len() < 2 {
        return Err(AnomalyError::DegenerateInput);
    }
    let n = kept[0].len();
    let m = kept.len();
    // standardized data matrix, n rows x m cols
    let mut x = nalgebra::DMatrix::<f64>::zeros(n, m);
    for (j, s) in kept.iter().enumerate() {
        let mean = stats::mean(&s.values);
        let std = stats::pop_std(&s.values);
        for (i, &v) in s.values.iter().enumerate() {
            x[(i, j)] = (v - mean) / std;
        }
    }

    let cov = (x.transpose() * &x) / n as f64;
    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
    });

    // components: explicit k, else the smallest k explaining >= 85% of
    // variance. Capped at m-1 either way: keeping all m axes reconstructs
    // exactly and the residual degenerates to numeric noise.
    let cap = m.saturating_sub(1).max(1);
    let k = match components {
        Some(k) => k.clamp(1, cap),
        None => {
            let total: f64 = eigen.eigenvalues.iter().sum();
            let mut cum = 0.0;
            let mut auto_k = cap.min(3);
            for (rank, &src) in order.iter().enumerate() {
                cum += eigen.eigenvalues[src];
                if cum >= 0.85 * total {
                    auto_k = (rank + 1).min(cap.min(3));
                    break;
                }
            }
            auto_k.max(1)
        }
    };
    let mut basis = nalgebra::DMatrix::<f64>::zeros(m, k);
    for (col, &src) in order.iter().take(k).enumerate() {
        basis.set_column(col, &eigen.eigenvectors.column(src));
    }

    // squared reconstruction error per row
    let projected = &x * &basis; // n x k
    let reconstructed = &projected * basis.transpose(); // n x m
    let mut errors = Vec::with_capacity(n);
    for i in 0..n {
        let mut err = 0.0;
        for j in 0..m {
            let d = x[(i, j)] - reconstructed[(i, j)];
            err += d * d;
        }
        errors.push(err);
    }

    let mean = stats::mean(&errors);
    let std = stats::pop_std(&errors);
    let combined_scores: Vec<f64> = if std == 0.0 {
        vec![0.0; n]
    } else {
        errors.iter().map(|e| (e - mean) / std).collect()
    };
    let top_k = combined_scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 3.0)
        .map(|(i, _)| i)
        .collect();

    Ok(CombinedAnomalyFinding {
        metrics: kept.iter().map(|s| s.name.clone()).collect(),
        dropped_metrics: dropped,
        components: k,
        timestamps: (0..n).map(|i| kept[0].timestamp_at(i)).collect(),
        combined_scores,
        top_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: Vec<f64>) -> MetricSeries {
        MetricSeries::new("m", 0, 1, values)
    }

    #[test]
    fn zscore_constant_series_no_findings() {
        let f = zscore_detect(&series(vec![5.0; 4]), 3.0);
        assert!(f.indices.is_empty());
    }

    #[test]
    fn zscore_single_outlier() {
        // 20 zeros + one 10: mean = 10/21, z of the 10 ~ 4.47
        let mut v = vec![0.0; 20];
        v.push(10.0);
        let f = zscore_detect(&series(v), 3.0);
        assert_eq!(f.indices, vec![20]);
        assert!((f.scores[0] - 4.472).abs() < 0.01);
    }

    #[test]
    fn zscore_cpu_spike_window() {
        // idle baseline with a sustained spike above 90%
        let mut v = vec![5.0; 100];
        for x in v.iter_mut().take(60).skip(50) {
            *x = 95.0;
        }
        let f = zscore_detect(&series(v), 2.0);
        assert_eq!(f.indices, (50..60).collect::<Vec<_>>());
    }

    #[test]
    fn iqr_flags_far_point() {
        let f = iqr_detect(&series(vec![1.0, 2.0, 3.0, 4.0, 100.0]), 1.5).unwrap();
        // Q1=2, Q3=4, IQR=2, upper fence 7
        assert_eq!(f.indices, vec![4]);
        assert!((f.scores[0] - (100.0 - 7.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn iqr_uniform_no_findings() {
        let f = iqr_detect(&series((1..=8).map(f64::from).collect()), 1.5).unwrap();
        assert!(f.indices.is_empty());
    }

    #[test]
    fn iqr_degenerate_zero_iqr() {
        let f = iqr_detect(&series(vec![3.0, 3.0, 3.0, 3.0, 9.0]), 1.5).unwrap();
        assert!(f.indices.is_empty());
    }

    #[test]
    fn iqr_too_short() {
        assert!(matches!(
            iqr_detect(&series(vec![1.0, 2.0, 3.0]), 1.5),
            Err(AnomalyError::TooShort { .. })
        ));
    }

    fn gaussian_series(n: usize, seed: u64) -> Vec<f64> {
        // Box-Muller over a seeded generator
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u1: f64 = rng.random_range(1e-12..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn forest_separates_planted_outliers() {
        let mut values = gaussian_series(500, 7);
        for _ in 0..5 {
            values.push(10.0);
        }
        let data: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let scores = isolation_forest_scores(&data, 100, 256, 42).unwrap();
        let mut ranked: Vec<usize> = (0..scores.len()).collect();
        ranked.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        for outlier in 500..505 {
            assert!(
                ranked[..10].contains(&outlier),
                "outlier {outlier} not in top-10"
            );
        }
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn forest_identical_points_below_threshold() {
        let data: Vec<Vec<f64>> = vec![vec![4.0]; 64];
        let scores = isolation_forest_scores(&data, 50, 32, 1).unwrap();
        assert!(scores.windows(2).all(|w| w[0] == w[1]));
        assert!(scores.iter().all(|&s| s <= 0.6));
    }

    #[test]
    fn forest_deterministic_per_seed() {
        let data: Vec<Vec<f64>> = gaussian_series(100, 3).iter().map(|&v| vec![v]).collect();
        let a = isolation_forest_scores(&data, 50, 64, 9).unwrap();
        let b = isolation_forest_scores(&data, 50, 64, 9).unwrap();
        assert_eq!(a, b);
        let c = isolation_forest_scores(&data, 50, 64, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forest_too_short() {
        let data = vec![vec![1.0]; 7];
        assert!(matches!(
            isolation_forest_scores(&data, 10, 8, 0),
            Err(AnomalyError::TooShort { .. })
        ));
    }

    #[test]
    fn selection_rule() {
        assert_eq!(select_detector(&series(vec![1.0; 30])), Detector::Iqr);
        assert_eq!(
            select_detector(&series(gaussian_series(1000, 11))),
            Detector::Zscore
        );
        // log-normal is heavily right-skewed
        let heavy: Vec<f64> = gaussian_series(1000, 12).iter().map(|z| z.exp()).collect();
        assert!(stats::skewness(&heavy) > 1.0);
        assert_eq!(select_detector(&series(heavy)), Detector::IsolationForest);
    }

    fn correlated_spike_set(spike_at: usize, seed: u64) -> Vec<MetricSeries> {
        let base = gaussian_series(50, seed);
        // correlated but not collinear (independent noise), spiking with
        // different magnitudes so the spike leaves the principal subspace
        let magnitudes = [8.0, 5.0, 11.0];
        (0..3)
            .map(|j| {
                let noise = gaussian_series(50, seed + 1000 * (j as u64 + 1));
                let mut v: Vec<f64> = base
                    .iter()
                    .zip(&noise)
                    .map(|(x, e)| x + 0.3 * e + j as f64)
                    .collect();
                v[spike_at] += magnitudes[j];
                let mut s = series(v);
                s.name = format!("m{j}");
                s
            })
            .collect()
    }

    #[test]
    fn pca_combined_spike_argmax() {
        let set = correlated_spike_set(7, 21);
        let refs: Vec<&MetricSeries> = set.iter().collect();
        let finding = combined_pca_score(&refs, None).unwrap();
        let argmax = finding
            .combined_scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 7);
        assert_eq!(finding.combined_scores.len(), 50);
    }

    #[test]
    fn pca_rejects_constant_inputs() {
        let a = series(vec![1.0; 10]);
        let b = series(vec![2.0; 10]);
        assert!(matches!(
            combined_pca_score(&[&a, &b], None),
            Err(AnomalyError::DegenerateInput)
        ));
    }

    #[test]
    fn pca_drops_constant_metric_but_proceeds() {
        let mut set = correlated_spike_set(3, 5);
        set.push({
            let mut s = series(vec![7.0; 50]);
            s.name = "flat".into();
            s
        });
        let refs: Vec<&MetricSeries> = set.iter().collect();
        let finding = combined_pca_score(&refs, None).unwrap();
        assert_eq!(finding.dropped_metrics, vec!["flat".to_string()]);
        assert_eq!(finding.metrics.len(), 3);
    }

    proptest! {
        // a > 0 affine transforms flag exactly the same indices
        #[test]
        fn zscore_affine_equivariance(
            values in proptest::collection::vec(-100.0f64..100.0, 10..60),
            a in 0.1f64..10.0, b in -50.0f64..50.0,
        ) {
            let s1 = series(values.clone());
            let s2 = series(values.iter().map(|x| a * x + b).collect());
            prop_assert_eq!(zscore_detect(&s1, 2.0).indices, zscore_detect(&s2, 2.0).indices);
        }

        #[test]
        fn iqr_affine_equivariance(
            values in proptest::collection::vec(-100.0f64..100.0, 4..60),
            a in 0.1f64..10.0, b in -50.0f64..50.0,
        ) {
            let s1 = series(values.clone());
            let s2 = series(values.iter().map(|x| a * x + b).collect());
            prop_assert_eq!(
                iqr_detect(&s1, 1.5).unwrap().indices,
                iqr_detect(&s2, 1.5).unwrap().indices
            );
        }

        #[test]
        fn pca_topk_invariant_under_rescaling(scale in 0.5f64..20.0, shift in -10.0f64..10.0) {
            let set = correlated_spike_set(11, 33);
            let refs: Vec<&MetricSeries> = set.iter().collect();
            let base = combined_pca_score(&refs, None).unwrap();
            let rescaled: Vec<MetricSeries> = set
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut t = s.clone();
                    if i == 1 {
                        t.values = t.values.iter().map(|v| scale * v + shift).collect();
                    }
                    t
                })
                .collect();
            let refs2: Vec<&MetricSeries> = rescaled.iter().collect();
            let other = combined_pca_score(&refs2, None).unwrap();
            prop_assert_eq!(base.top_k, other.top_k);
        }
    }
}
