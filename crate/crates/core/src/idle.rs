//! Idle-resource identification: long idle stretches per metric (strict
//! below-threshold runs with a minimum duration) and CPU-core workload
//! imbalance via the coefficient of variation of per-core means, with
//! consolidation / rebalancing recommendations.

use serde::{Deserialize, Serialize};

use crate::preprocess::MetricSeries;
use crate::stats;

/// Half-open idle interval [start_ns, end_ns), matching the bucket
/// convention used in preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleInterval {
    pub start_ns: i64,
    pub end_ns: i64,
    pub mean_utilization: f64,
}

/// Maximal runs where every sample is strictly below `idle_threshold`
/// and the run spans at least `min_duration_ns` of trace time. A NaN
/// sample never counts as idle.
pub fn idle_intervals(
    series: &MetricSeries,
    idle_threshold: f64,
    min_duration_ns: i64,
) -> Vec<IdleInterval> {
    let mut intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=series.values.len() {
        let idle = series
            .values
            .get(i)
            .map(|&v| v < idle_threshold)
            .unwrap_or(false);
        match (run_start, idle) {
            (None, true) => run_start = Some(i),
            (Some(start), false) => {
                run_start = None;
                let len = (i - start) as i64;
                if len * series.dt >= min_duration_ns {
                    let run = &series.values[start..i];
                    intervals.push(IdleInterval {
                        start_ns: series.t0 + start as i64 * series.dt,
                        end_ns: series.t0 + i as i64 * series.dt,
                        mean_utilization: stats::mean(run),
                    });
                }
            }
            _ => {}
        }
    }
    intervals
}

/// Fraction of the series duration covered by the given idle intervals.
pub fn idle_fraction(series: &MetricSeries, intervals: &[IdleInterval]) -> f64 {
    if series.values.is_empty() {
        return 0.0;
    }
    let total = series.values.len() as i64 * series.dt;
    let idle: i64 = intervals.iter().map(|iv| iv.end_ns - iv.start_ns).sum();
    idle as f64 / total as f64
}

/// Coefficient of variation of per-core mean utilization:
/// population std of means over mean of means, 0 when the mean is 0.
pub fn core_imbalance(per_core: &[&MetricSeries]) -> (f64, Vec<f64>) {
    let means: Vec<f64> = per_core.iter().map(|s| stats::mean(&s.values)).collect();
    let grand = stats::mean(&means);
    let cv = if grand == 0.0 {
        0.0
    } else {
        stats::pop_std(&means) / grand
    };
    (cv, means)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IdleRuleId {
    Consolidate,
    Rebalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleRecommendation {
    pub rule: IdleRuleId,
    pub target: String,
    pub text: String,
}

/// Per-metric idle analysis results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricIdle {
    pub metric: String,
    pub intervals: Vec<IdleInterval>,
    pub idle_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleReport {
    pub metrics: Vec<MetricIdle>,
    /// Core-group imbalance, when a per-core group was analyzed.
    pub imbalance: Option<GroupImbalance>,
    pub recommendations: Vec<IdleRecommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupImbalance {
    pub group: String,
    pub cv: f64,
    pub per_core_means: Vec<(String, f64)>,
}

/// Rule table: idle fraction >= threshold => CONSOLIDATE(metric);
/// cv >= imbalance threshold => REBALANCE(group); else nothing.
pub fn recommend_idle(
    metrics: &[MetricIdle],
    imbalance: Option<&GroupImbalance>,
    idle_fraction_threshold: f64,
    imbalance_threshold: f64,
) -> Vec<IdleRecommendation> {
    let mut recs = Vec::new();
    for m in metrics {
        if m.idle_fraction >= idle_fraction_threshold {
            recs.push(IdleRecommendation {
                rule: IdleRuleId::Consolidate,
                target: m.metric.clone(),
                text: format!(
                    "{} idle {} of the trace; candidate for consolidation",
                    m.metric,
                    stats::fmt_sig4(m.idle_fraction)
                ),
            });
        }
    }
    if let Some(g) = imbalance {
        if g.cv >= imbalance_threshold {
            recs.push(IdleRecommendation {
                rule: IdleRuleId::Rebalance,
                target: g.group.clone(),
                text: format!(
                    "workload imbalance cv {} across {}; rebalance",
                    stats::fmt_sig4(g.cv),
                    g.group
                ),
            });
        }
    }
    recs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: Vec<f64>) -> MetricSeries {
        MetricSeries::new("m", 0, 1_000_000_000, values)
    }

    #[test]
    fn idle_run_recovered_with_exact_boundaries() {
        let mut v = vec![50.0; 300];
        for x in &mut v[100..200] {
            *x = 0.0;
        }
        let ivs = idle_intervals(&series(v), 5.0, 50 * 1_000_000_000);
        assert_eq!(ivs.len(), 1);
        assert_eq!(ivs[0].start_ns, 100 * 1_000_000_000);
        assert_eq!(ivs[0].end_ns, 200 * 1_000_000_000);
        assert_eq!(ivs[0].mean_utilization, 0.0);
    }

    #[test]
    fn all_busy_no_intervals() {
        let ivs = idle_intervals(&series(vec![80.0; 100]), 5.0, 1_000_000_000);
        assert!(ivs.is_empty());
    }

    #[test]
    fn short_run_gated_by_min_duration() {
        let mut v = vec![50.0; 100];
        for x in &mut v[10..40] {
            *x = 1.0;
        }
        let ivs = idle_intervals(&series(v), 5.0, 50 * 1_000_000_000);
        assert!(ivs.is_empty());
    }

    #[test]
    fn strict_inequality_threshold_zero_never_idle() {
        let ivs = idle_intervals(&series(vec![0.0; 100]), 0.0, 0);
        assert!(ivs.is_empty());
    }

    #[test]
    fn run_at_series_end_is_closed() {
        let mut v = vec![50.0; 100];
        for x in &mut v[40..] {
            *x = 0.0;
        }
        let ivs = idle_intervals(&series(v), 5.0, 10 * 1_000_000_000);
        assert_eq!(ivs.len(), 1);
        assert_eq!(ivs[0].end_ns, 100 * 1_000_000_000);
    }

    #[test]
    fn nan_breaks_idle_run() {
        let mut v = vec![0.0; 100];
        v[50] = f64::NAN;
        let ivs = idle_intervals(&series(v), 5.0, 10 * 1_000_000_000);
        assert_eq!(ivs.len(), 2);
    }

    #[test]
    fn imbalance_hand_examples() {
        let balanced: Vec<MetricSeries> = (0..4).map(|_| series(vec![50.0; 10])).collect();
        let refs: Vec<&MetricSeries> = balanced.iter().collect();
        assert_eq!(core_imbalance(&refs).0, 0.0);

        let hot = series(vec![90.0; 10]);
        let cold = series(vec![10.0; 10]);
        let (cv, means) = core_imbalance(&[&hot, &cold]);
        assert!((cv - 0.8).abs() < 1e-9);
        assert_eq!(means, vec![90.0, 10.0]);

        let z1 = series(vec![0.0; 10]);
        let z2 = series(vec![0.0; 10]);
        assert_eq!(core_imbalance(&[&z1, &z2]).0, 0.0);
    }

    #[test]
    fn recommend_rules() {
        let m = MetricIdle {
            metric: "memory".into(),
            intervals: vec![],
            idle_fraction: 0.9,
        };
        let g = GroupImbalance {
            group: "cpu".into(),
            cv: 0.8,
            per_core_means: vec![("cpu0".into(), 90.0), ("cpu1".into(), 10.0)],
        };
        let recs = recommend_idle(&[m], Some(&g), 0.5, 0.5);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].rule, IdleRuleId::Consolidate);
        assert_eq!(recs[0].target, "memory");
        assert_eq!(recs[1].rule, IdleRuleId::Rebalance);
        assert_eq!(recs[1].target, "cpu");

        let busy = MetricIdle {
            metric: "disk".into(),
            intervals: vec![],
            idle_fraction: 0.1,
        };
        let calm = GroupImbalance {
            group: "cpu".into(),
            cv: 0.05,
            per_core_means: vec![],
        };
        assert!(recommend_idle(&[busy], Some(&calm), 0.5, 0.5).is_empty());
    }

    proptest! {
        #[test]
        fn fraction_matches_interval_durations(
            values in proptest::collection::vec(0.0f64..100.0, 1..300),
            threshold in 1.0f64..99.0,
        ) {
            let s = series(values);
            let ivs = idle_intervals(&s, threshold, 0);
            let frac = idle_fraction(&s, &ivs);
            let manual = s.values.iter().filter(|&&v| v < threshold).count() as f64
                / s.values.len() as f64;
            prop_assert!((frac - manual).abs() < 1e-9);
        }

        #[test]
        fn intervals_sorted_and_disjoint(
            values in proptest::collection::vec(0.0f64..10.0, 1..300),
            threshold in 1.0f64..9.0,
            min_samples in 0i64..20,
        ) {
            let s = series(values);
            let ivs = idle_intervals(&s, threshold, min_samples * 1_000_000_000);
            for w in ivs.windows(2) {
                prop_assert!(w[0].end_ns < w[1].start_ns);
            }
            for iv in &ivs {
                prop_assert!(iv.start_ns < iv.end_ns);
            }
        }

        #[test]
        fn cv_scale_invariant(
            a in proptest::collection::vec(0.1f64..100.0, 5..50),
            b in proptest::collection::vec(0.1f64..100.0, 5..50),
            scale in 0.1f64..50.0,
        ) {
            let s1 = series(a.clone());
            let s2 = series(b.clone());
            let (cv, _) = core_imbalance(&[&s1, &s2]);
            let s1s = series(a.iter().map(|v| v * scale).collect());
            let s2s = series(b.iter().map(|v| v * scale).collect());
            let (cvs, _) = core_imbalance(&[&s1s, &s2s]);
            prop_assert!((cv - cvs).abs() < 1e-9);
        }
    }
}
