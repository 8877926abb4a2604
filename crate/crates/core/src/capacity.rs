//! Capacity planning: trend fitting (linear OLS or Holt double exponential
//! smoothing), forward projection with a constant-width uncertainty band,
//! threshold-crossing prediction, and rule-table scaling recommendations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::MetricSeries;
use crate::stats;

#[derive(Debug, Error)]
pub enum CapacityError {
    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendModel {
    Linear,
    Holt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedParams {
    Linear { slope: f64, intercept: f64 },
    Holt { level: f64, trend: f64, alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTrend {
    pub params: FittedParams,
    /// Population std of in-sample one-step-ahead errors.
    pub residual_std: f64,
    pub n: usize,
    pub t0: i64,
    pub dt: i64,
}

/// Fit a trend model over the sample index. Requires >= 10 samples,
/// gap-filled (no NaN).
pub fn fit_trend(
    series: &MetricSeries,
    model: TrendModel,
    holt_alpha: f64,
    holt_beta: f64,
) -> Result<FittedTrend, CapacityError> {
    let x = &series.values;
    if x.len() < 10 {
        return Err(CapacityError::TooShort {
            needed: 10,
            got: x.len(),
        });
    }
    let (params, residuals) = match model {
        TrendModel::Linear => {
            let idx: Vec<f64> = (0..x.len()).map(|i| i as f64).collect();
            let (slope, intercept, _) = stats::ols_fit(&idx, x);
            let res: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v - (slope * i as f64 + intercept))
                .collect();
            (FittedParams::Linear { slope, intercept }, res)
        }
        TrendModel::Holt => {
            let mut level = x[0];
            let mut trend = x[1] - x[0];
            let mut res = Vec::with_capacity(x.len() - 1);
            for &v in &x[1..] {
                let predicted = level + trend;
                res.push(v - predicted);
                let prev_level = level;
                level = holt_alpha * v + (1.0 - holt_alpha) * (prev_level + trend);
                trend = holt_beta * (level - prev_level) + (1.0 - holt_beta) * trend;
            }
            (
                FittedParams::Holt {
                    level,
                    trend,
                    alpha: holt_alpha,
                    beta: holt_beta,
                },
                res,
            )
        }
    };
    Ok(FittedTrend {
        params,
        residual_std: stats::pop_std(&residuals),
        n: x.len(),
        t0: series.t0,
        dt: series.dt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub point: Vec<f64>,
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
    pub history_len: usize,
    pub t0: i64,
    pub dt: i64,
}

impl Forecast {
    /// Normalized timestamp of forecast step `index` (first step = index 0).
    pub fn timestamp_at(&self, index: usize) -> i64 {
        self.t0 + (self.history_len + index) as i64 * self.dt
    }
}

/// Extrapolate the fitted model `horizon` steps past the end of the series.
/// Band is point +/- 2 * residual_std, constant width.
pub fn forecast(fitted: &FittedTrend, horizon: usize) -> Forecast {
    assert!(horizon >= 1, "horizon must be >= 1");
    let half_width = 2.0 * fitted.residual_std;
    let point: Vec<f64> = (1..=horizon)
        .map(|k| match fitted.params {
            FittedParams::Linear { slope, intercept } => {
                slope * (fitted.n - 1 + k) as f64 + intercept
            }
            FittedParams::Holt { level, trend, .. } => level + k as f64 * trend,
        })
        .collect();
    Forecast {
        band_low: point.iter().map(|p| p - half_width).collect(),
        band_high: point.iter().map(|p| p + half_width).collect(),
        point,
        history_len: fitted.n,
        t0: fitted.t0,
        dt: fitted.dt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossDirection {
    Above,
    Below,
}

impl CrossDirection {
    fn crosses(self, value: f64, threshold: f64) -> bool {
        match self {
            CrossDirection::Above => value >= threshold,
            CrossDirection::Below => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossConfidence {
    Certain,
    BandOverlap,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub threshold: f64,
    pub direction: CrossDirection,
    pub horizon_index: Option<usize>,
    pub predicted_time_ns: Option<i64>,
    pub confidence: CrossConfidence,
}

/// Earliest horizon step where the point forecast crosses the threshold
/// (certain), falling back to the band (band_overlap), else none.
pub fn threshold_crossing(
    forecast: &Forecast,
    threshold: f64,
    direction: CrossDirection,
) -> Crossing {
    let point_hit = forecast
        .point
        .iter()
        .position(|&p| direction.crosses(p, threshold));
    let (index, confidence) = match point_hit {
        Some(i) => (Some(i), CrossConfidence::Certain),
        None => {
            let band = match direction {
                CrossDirection::Above => &forecast.band_high,
                CrossDirection::Below => &forecast.band_low,
            };
            match band.iter().position(|&b| direction.crosses(b, threshold)) {
                Some(i) => (Some(i), CrossConfidence::BandOverlap),
                None => (None, CrossConfidence::None),
            }
        }
    };
    Crossing {
        threshold,
        direction,
        horizon_index: index,
        predicted_time_ns: index.map(|i| forecast.timestamp_at(i)),
        confidence,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleId {
    ScaleUp,
    Monitor,
    DownscaleCandidate,
    NoAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rule: RuleId,
    pub metric: String,
    pub text: String,
}

/// Rule table: certain crossing => SCALE_UP with deadline; band overlap =>
/// MONITOR; low mean utilization with no crossing => DOWNSCALE_CANDIDATE;
/// otherwise NO_ACTION. Pure function of its inputs.
pub fn recommend(
    metric: &str,
    mean_utilization: f64,
    low_util_threshold: f64,
    crossings: &[Crossing],
) -> Recommendation {
    let certain = crossings
        .iter()
        .find(|c| c.confidence == CrossConfidence::Certain);
    let overlap = crossings
        .iter()
        .find(|c| c.confidence == CrossConfidence::BandOverlap);
    if let Some(c) = certain {
        return Recommendation {
            rule: RuleId::ScaleUp,
            metric: metric.to_string(),
            text: format!(
                "scale up {metric} before t={} ns (forecast crosses {} {:?})",
                c.predicted_time_ns.unwrap(),
                c.threshold,
                c.direction
            ),
        };
    }
    if let Some(c) = overlap {
        return Recommendation {
            rule: RuleId::Monitor,
            metric: metric.to_string(),
            text: format!(
                "monitor {metric}; possible violation of {} near t={} ns",
                c.threshold,
                c.predicted_time_ns.unwrap()
            ),
        };
    }
    if mean_utilization < low_util_threshold {
        return Recommendation {
            rule: RuleId::DownscaleCandidate,
            metric: metric.to_string(),
            text: format!(
                "{metric} mean utilization {} below {low_util_threshold}; candidate for downscaling",
                stats::fmt_sig4(mean_utilization)
            ),
        };
    }
    Recommendation {
        rule: RuleId::NoAction,
        metric: metric.to_string(),
        text: format!("no action for {metric}"),
    }
}

/// Full per-metric forecast payload for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityForecast {
    pub metric: String,
    pub model: TrendModel,
    pub horizon: usize,
    pub fitted_params: FittedParams,
    pub residual_std: f64,
    pub point_forecast: Vec<f64>,
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
    pub crossings: Vec<Crossing>,
    pub recommendation: Recommendation,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series(values: Vec<f64>) -> MetricSeries {
        MetricSeries::new("m", 0, 1_000_000_000, values)
    }

    fn line(n: usize, slope: f64, intercept: f64) -> Vec<f64> {
        (0..n).map(|t| slope * t as f64 + intercept).collect()
    }

    #[test]
    fn linear_fits_exact_line() {
        let s = series(line(10, 2.0, 1.0));
        let fit = fit_trend(&s, TrendModel::Linear, 0.5, 0.3).unwrap();
        match fit.params {
            FittedParams::Linear { slope, intercept } => {
                assert!((slope - 2.0).abs() < 1e-9);
                assert!((intercept - 1.0).abs() < 1e-9);
            }
            _ => panic!("expected linear"),
        }
        assert!(fit.residual_std < 1e-9);
    }

    #[test]
    fn holt_exact_line_zero_error() {
        let s = series(line(20, 2.0, 1.0));
        let fit = fit_trend(&s, TrendModel::Holt, 0.5, 0.3).unwrap();
        assert!(fit.residual_std < 1e-9);
        let fc = forecast(&fit, 3);
        assert!((fc.point[0] - 41.0).abs() < 1e-9);
        assert!((fc.point[2] - 45.0).abs() < 1e-9);
    }

    #[test]
    fn holt_matches_hand_unrolled_recurrence() {
        let x = [3.0, 5.0, 4.0, 8.0, 7.0, 9.0, 12.0, 11.0, 15.0, 14.0];
        let (alpha, beta) = (0.5, 0.3);
        // independent unrolled reference
        let mut l = x[0];
        let mut b = x[1] - x[0];
        for &v in &x[1..] {
            let prev = l;
            l = alpha * v + (1.0 - alpha) * (prev + b);
            b = beta * (l - prev) + (1.0 - beta) * b;
        }
        let fit = fit_trend(&series(x.to_vec()), TrendModel::Holt, alpha, beta).unwrap();
        match fit.params {
            FittedParams::Holt { level, trend, .. } => {
                assert!((level - l).abs() < 1e-12);
                assert!((trend - b).abs() < 1e-12);
            }
            _ => panic!("expected holt"),
        }
    }

    #[test]
    fn constant_series_zero_slope_both_models() {
        let s = series(vec![5.0; 12]);
        let lin = fit_trend(&s, TrendModel::Linear, 0.5, 0.3).unwrap();
        match lin.params {
            FittedParams::Linear { slope, .. } => assert!(slope.abs() < 1e-12),
            _ => unreachable!(),
        }
        let holt = fit_trend(&s, TrendModel::Holt, 0.5, 0.3).unwrap();
        match holt.params {
            FittedParams::Holt { trend, .. } => assert!(trend.abs() < 1e-12),
            _ => unreachable!(),
        }
        let fc = forecast(&holt, 4);
        for p in &fc.point {
            assert!((p - 5.0).abs() < 1e-9);
        }
        assert_eq!(fc.point, fc.band_low);
        assert_eq!(fc.point, fc.band_high);
    }

    #[test]
    fn too_short_errors() {
        let s = series(vec![1.0; 9]);
        assert!(matches!(
            fit_trend(&s, TrendModel::Linear, 0.5, 0.3),
            Err(CapacityError::TooShort { .. })
        ));
    }

    #[test]
    fn linear_forecast_from_exact_fit() {
        let s = series(line(10, 2.0, 1.0)); // last sample t=9 value 19
        let fit = fit_trend(&s, TrendModel::Linear, 0.5, 0.3).unwrap();
        let fc = forecast(&fit, 3);
        let expect = [21.0, 23.0, 25.0];
        for (p, e) in fc.point.iter().zip(expect) {
            assert!((p - e).abs() < 1e-9);
        }
        assert_eq!(fc.point, fc.band_low);
    }

    #[test]
    fn threshold_crossing_exact_line() {
        let s = series(line(10, 2.0, 1.0));
        let fit = fit_trend(&s, TrendModel::Linear, 0.5, 0.3).unwrap();
        let fc = forecast(&fit, 20);
        let c = threshold_crossing(&fc, 41.0, CrossDirection::Above);
        // 2t+1 = 41 at t = 20, i.e. horizon index 10 past the 10-sample history
        assert_eq!(c.confidence, CrossConfidence::Certain);
        assert_eq!(c.horizon_index, Some(10));
        assert_eq!(c.predicted_time_ns, Some(20 * 1_000_000_000));
    }

    #[test]
    fn direction_mismatch_no_crossing() {
        let s = series(line(10, -1.0, 100.0));
        let fit = fit_trend(&s, TrendModel::Linear, 0.5, 0.3).unwrap();
        let fc = forecast(&fit, 10);
        let c = threshold_crossing(&fc, 200.0, CrossDirection::Above);
        assert_eq!(c.confidence, CrossConfidence::None);
        assert_eq!(c.horizon_index, None);
        assert_eq!(c.predicted_time_ns, None);
    }

    #[test]
    fn band_overlap_when_only_band_touches() {
        let fc = Forecast {
            point: vec![5.0; 4],
            band_low: vec![3.0; 4],
            band_high: vec![7.0; 4],
            history_len: 10,
            t0: 0,
            dt: 1,
        };
        let c = threshold_crossing(&fc, 6.5, CrossDirection::Above);
        assert_eq!(c.confidence, CrossConfidence::BandOverlap);
        assert_eq!(c.horizon_index, Some(0));
        let c2 = threshold_crossing(&fc, 8.0, CrossDirection::Above);
        assert_eq!(c2.confidence, CrossConfidence::None);
        let c3 = threshold_crossing(&fc, 3.5, CrossDirection::Below);
        assert_eq!(c3.confidence, CrossConfidence::BandOverlap);
    }

    fn certain_crossing(t: i64) -> Crossing {
        Crossing {
            threshold: 90.0,
            direction: CrossDirection::Above,
            horizon_index: Some(3),
            predicted_time_ns: Some(t),
            confidence: CrossConfidence::Certain,
        }
    }

    #[test]
    fn recommend_rule_table() {
        let r = recommend("cpu", 50.0, 10.0, &[certain_crossing(42)]);
        assert_eq!(r.rule, RuleId::ScaleUp);
        assert!(r.text.contains("t=42"));

        let mut overlap = certain_crossing(42);
        overlap.confidence = CrossConfidence::BandOverlap;
        assert_eq!(recommend("cpu", 50.0, 10.0, &[overlap]).rule, RuleId::Monitor);

        assert_eq!(
            recommend("cpu", 2.0, 10.0, &[]).rule,
            RuleId::DownscaleCandidate
        );
        assert_eq!(recommend("cpu", 50.0, 10.0, &[]).rule, RuleId::NoAction);
    }

    #[test]
    fn recommend_is_pure() {
        let a = recommend("mem", 3.0, 10.0, &[]);
        let b = recommend("mem", 3.0, 10.0, &[]);
        assert_eq!(a, b);
    }

    #[test]
    fn band_coverage_on_noisy_slope() {
        use rand::Rng;
        let mut covered = 0usize;
        let mut total = 0usize;
        for trial in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + trial);
            let n = 60;
            let horizon = 10;
            let noisy: Vec<f64> = (0..n)
                .map(|t| 5.0 * t as f64 + 3.0 + rng.random_range(-2.0..2.0))
                .collect();
            let fit = fit_trend(&series(noisy), TrendModel::Linear, 0.5, 0.3).unwrap();
            let fc = forecast(&fit, horizon);
            for k in 0..horizon {
                let truth = 5.0 * (n + k) as f64 + 3.0;
                if truth >= fc.band_low[k] && truth <= fc.band_high[k] {
                    covered += 1;
                }
                total += 1;
            }
        }
        assert!(covered as f64 / total as f64 >= 0.9);
    }

    proptest! {
        #[test]
        fn band_brackets_point(values in proptest::collection::vec(-100.0f64..100.0, 10..40), horizon in 1usize..20) {
            let fit = fit_trend(&series(values), TrendModel::Linear, 0.5, 0.3).unwrap();
            let fc = forecast(&fit, horizon);
            for i in 0..horizon {
                prop_assert!(fc.band_low[i] <= fc.point[i] + 1e-12);
                prop_assert!(fc.point[i] <= fc.band_high[i] + 1e-12);
            }
        }

        #[test]
        fn raising_above_threshold_never_earlier(
            values in proptest::collection::vec(0.0f64..100.0, 10..40),
            thr in 0.0f64..200.0,
            bump in 0.1f64..50.0,
        ) {
            let fit = fit_trend(&series(values), TrendModel::Linear, 0.5, 0.3).unwrap();
            let fc = forecast(&fit, 30);
            let lo = threshold_crossing(&fc, thr, CrossDirection::Above);
            let hi = threshold_crossing(&fc, thr + bump, CrossDirection::Above);
            match (lo.horizon_index, hi.horizon_index) {
                (None, Some(_)) => prop_assert!(false, "raised threshold crossed but lower did not"),
                (Some(a), Some(b)) => {
                    // only comparable at equal confidence tiers
                    if lo.confidence == hi.confidence {
                        prop_assert!(b >= a);
                    }
                }
                _ => {}
            }
        }

        #[test]
        fn linear_exact_at_any_horizon(slope in -10.0f64..10.0, intercept in -10.0f64..10.0, horizon in 1usize..50) {
            let s = series(line(15, slope, intercept));
            let fit = fit_trend(&s, TrendModel::Linear, 0.5, 0.3).unwrap();
            let fc = forecast(&fit, horizon);
            let truth = slope * (15 + horizon - 1) as f64 + intercept;
            prop_assert!((fc.point[horizon - 1] - truth).abs() < 1e-9);
        }
    }
}
