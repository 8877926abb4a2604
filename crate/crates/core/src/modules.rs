//! The six built-in analysis modules, each a thin parameterized wrapper
//! around the algorithm crates, registered through [`builtin_registry`].
//!
//! Confidence rules (each module documents its own):
//! - anomaly: fraction of metrics analyzed without a degenerate error.
//! - memleak: 1.0 for NoLeak; the trend r^2 for a trend-backed verdict;
//!   0.6 for LeakSuspected without a memory series; 0.3 for Inconclusive.
//! - correlation: fraction of non-degenerate metric pairs.
//! - changepoint: mean vote fraction of emitted voted points, 1.0 when no
//!   votes were emitted.
//! - capacity: mean of 1 / (1 + residual_std / value scale) over metrics.
//! - idle: 1.0 (deterministic rule evaluation).

use serde_json::json;

use crate::anomaly::{self, Detector, ForestParams};
use crate::base::{
    AnalysisModule, ModuleDescriptor, ModuleOutput, ParamSpec, Registry, ReportKind,
    ResolvedParams,
};
use crate::capacity::{self, CrossConfidence, CrossDirection, TrendModel};
use crate::changepoint;
use crate::correlation::{self, CorrMethod};
use crate::idle;
use crate::memleak::{self, LeakParams, LeakVerdict};
use crate::preprocess::{fill_gaps, Experiment, GapPolicy, MetricSeries};
use crate::stats::fmt_sig4;

const VERSION: &str = "1.0.0";

/// Gap-fill every series with the consumer's default policy; series that
/// are entirely missing are skipped with a reason entry.
fn filled_series(
    experiment: &Experiment,
    policy: GapPolicy,
) -> (Vec<MetricSeries>, Vec<(String, String)>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for s in experiment.series().values() {
        match fill_gaps(s, policy) {
            Ok(f) => out.push(f),
            Err(e) => skipped.push((s.name.clone(), e.to_string())),
        }
    }
    (out, skipped)
}

fn skipped_json(skipped: &[(String, String)]) -> serde_json::Value {
    json!(skipped
        .iter()
        .map(|(m, r)| json!({"metric": m, "reason": r}))
        .collect::<Vec<_>>())
}

// ---------------------------------------------------------------------------
// anomaly

struct AnomalyModule;

impl AnalysisModule for AnomalyModule {
    fn descriptor(&self) -> ModuleDescriptor {
        ModuleDescriptor {
            name: "anomaly".into(),
            version: VERSION.into(),
            produces: ReportKind::Anomaly,
            parameter_schema: vec![
                ParamSpec::enumerated(
                    "detector",
                    "auto",
                    &["auto", "zscore", "iqr", "isolation_forest"],
                    "detector to apply; auto picks per series shape",
                ),
                ParamSpec::float("zscore_threshold", 3.0, "|z| cutoff for the z-score rule"),
                ParamSpec::float("iqr_k", 1.5, "Tukey fence multiplier"),
                ParamSpec::int("n_trees", 100, "isolation forest ensemble size"),
                ParamSpec::int("subsample", 256, "isolation forest subsample size"),
                ParamSpec::float(
                    "score_threshold",
                    0.6,
                    "isolation forest anomaly score cutoff",
                ),
                ParamSpec::int("seed", 42, "isolation forest RNG seed"),
            ],
        }
    }

    fn run(
        &self,
        experiment: &Experiment,
        params: &ResolvedParams,
    ) -> Result<ModuleOutput, String> {
        let (series, mut skipped) = filled_series(experiment, GapPolicy::Linear);
        let forest = ForestParams {
            n_trees: params.get_i64("n_trees").max(1) as usize,
            subsample: params.get_i64("subsample").max(2) as usize,
            score_threshold: params.get_f64("score_threshold"),
            seed: params.get_i64("seed") as u64,
        };
        let choice = params.get_str("detector").to_string();

        let mut findings = Vec::new();
        let mut narrative = Vec::new();
        for s in &series {
            let detector = match choice.as_str() {
                "zscore" => Detector::Zscore,
                "iqr" => Detector::Iqr,
                "isolation_forest" => Detector::IsolationForest,
                _ => anomaly::select_detector(s),
            };
            let result = match detector {
                Detector::Zscore => Ok(anomaly::zscore_detect(s, params.get_f64("zscore_threshold"))),
                Detector::Iqr => anomaly::iqr_detect(s, params.get_f64("iqr_k")),
                Detector::IsolationForest => anomaly::isolation_forest_detect(s, &forest),
            };
            match result {
                Ok(f) => {
                    if !f.indices.is_empty() {
                        let max_score = f.scores.iter().cloned().fold(f64::MIN, f64::max);
                        narrative.push(format!(
                            "{}: {} anomalous samples via {:?} (max score {})",
                            f.metric,
                            f.indices.len(),
                            f.detector,
                            fmt_sig4(max_score)
                        ));
                    }
                    findings.push(f);
                }
                Err(e) => skipped.push((s.name.clone(), e.to_string())),
            }
        }

        // combined PCA scoring across the experiment when possible
        let refs: Vec<&MetricSeries> = series.iter().collect();
        let combined = match anomaly::combined_pca_score(&refs, None) {
            Ok(c) => {
                if !c.top_k.is_empty() {
                    narrative.push(format!(
                        "combined score flags {} co-occurring indices across {} metrics",
                        c.top_k.len(),
                        c.metrics.len()
                    ));
                }
                serde_json::to_value(&c).map_err(|e| e.to_string())?
            }
            Err(_) => serde_json::Value::Null,
        };

        let total = experiment.series().len().max(1);
        let confidence = (total - skipped.len().min(total)) as f64 / total as f64;
        Ok(ModuleOutput {
            findings: json!({
                "per_metric": findings,
                "combined": combined,
                "skipped": skipped_json(&skipped),
            }),
            confidence,
            narrative_seed: narrative,
        })
    }
}

// ---------------------------------------------------------------------------
// memleak

struct MemleakModule;

impl AnalysisModule for MemleakModule {
    fn descriptor(&self) -> ModuleDescriptor {
        ModuleDescriptor {
            name: "memleak".into(),
            version: VERSION.into(),
            produces: ReportKind::Leak,
            parameter_schema: vec![
                ParamSpec::string("alloc_event", "malloc", "allocation event name"),
                ParamSpec::string("free_event", "free", "free event name"),
                ParamSpec::string(
                    "memory_metric",
                    "",
                    "metric series for growth-trend analysis; empty to skip",
                ),
                ParamSpec::int("min_leaked_bytes", 0, "ignore callsites leaking fewer bytes"),
                ParamSpec::float(
                    "slope_threshold_bytes_per_s",
                    0.0,
                    "growth slope above which a leak is suspected",
                ),
                ParamSpec::float("r2_threshold", 0.8, "minimum r^2 to trust the trend"),
            ],
        }
    }

    fn run(
        &self,
        experiment: &Experiment,
        params: &ResolvedParams,
    ) -> Result<ModuleOutput, String> {
        let outcome = memleak::track_lifetimes(
            experiment.events(),
            params.get_str("alloc_event"),
            params.get_str("free_event"),
        )
        .map_err(|e| e.to_string())?;

        let metric_name = params.get_str("memory_metric");
        let filled;
        let memory_series = if metric_name.is_empty() {
            None
        } else {
            let s = experiment
                .get(metric_name)
                .ok_or_else(|| format!("memory_metric `{metric_name}` not in experiment"))?;
            filled = fill_gaps(s, GapPolicy::Ffill).map_err(|e| e.to_string())?;
            Some(&filled)
        };

        let leak_params = LeakParams {
            min_leaked_bytes: params.get_i64("min_leaked_bytes").max(0) as u64,
            slope_threshold_bytes_per_s: params.get_f64("slope_threshold_bytes_per_s"),
            r2_threshold: params.get_f64("r2_threshold"),
        };
        let report = memleak::build_leak_report(&outcome, memory_series, &leak_params)
            .map_err(|e| e.to_string())?;

        let mut narrative = Vec::new();
        match report.verdict {
            LeakVerdict::NoLeak => narrative.push("all allocations freed; no leak".to_string()),
            LeakVerdict::LeakSuspected => {
                narrative.push(format!(
                    "{} unmatched allocations, {} bytes leaked",
                    report.unmatched.len(),
                    report.total_leaked_bytes
                ));
                if let Some((site, bytes)) = report.leaked_bytes_by_callsite.first() {
                    narrative.push(format!("top leaking callsite {site} ({bytes} bytes)"));
                }
                if let Some(slope) = report.growth_slope_bytes_per_s {
                    narrative.push(format!(
                        "memory grows at {} bytes/s (r^2 {})",
                        fmt_sig4(slope),
                        fmt_sig4(report.growth_r2.unwrap_or(0.0))
                    ));
                }
            }
            LeakVerdict::Inconclusive => narrative.push(format!(
                "{} unmatched allocations but no supporting growth trend",
                report.unmatched.len()
            )),
        }
        for a in &report.anomalies {
            narrative.push(format!("allocation anomaly: {a:?}"));
        }

        let confidence = match (report.verdict, report.growth_r2) {
            (LeakVerdict::NoLeak, _) => 1.0,
            (LeakVerdict::LeakSuspected, Some(r2)) => r2.clamp(0.0, 1.0),
            (LeakVerdict::LeakSuspected, None) => 0.6,
            (LeakVerdict::Inconclusive, _) => 0.3,
        };
        Ok(ModuleOutput {
            findings: serde_json::to_value(&report).map_err(|e| e.to_string())?,
            confidence,
            narrative_seed: narrative,
        })
    }
}

// ---------------------------------------------------------------------------
// correlation

struct CorrelationModule;

impl AnalysisModule for CorrelationModule {
    fn descriptor(&self) -> ModuleDescriptor {
        ModuleDescriptor {
            name: "correlation".into(),
            version: VERSION.into(),
            produces: ReportKind::Correlation,
            parameter_schema: vec![
                ParamSpec::int(
                    "max_lag",
                    -1,
                    "maximum lag in samples; -1 = min(len/4, 100)",
                ),
                ParamSpec::float("r_threshold", 0.7, "|r| above which an edge is significant"),
                ParamSpec::enumerated(
                    "method",
                    "pearson",
                    &["pearson", "spearman"],
                    "correlation coefficient",
                ),
            ],
        }
    }

    fn run(
        &self,
        experiment: &Experiment,
        params: &ResolvedParams,
    ) -> Result<ModuleOutput, String> {
        let (series, skipped) = filled_series(experiment, GapPolicy::Linear);
        let len = experiment.len();
        let max_lag = match params.get_i64("max_lag") {
            v if v < 0 => (len / 4).min(100),
            v => v as usize,
        };
        let method = match params.get_str("method") {
            "spearman" => CorrMethod::Spearman,
            _ => CorrMethod::Pearson,
        };
        let refs: Vec<&MetricSeries> = series.iter().collect();
        let report =
            correlation::correlation_matrix(&refs, max_lag, params.get_f64("r_threshold"), method);

        let mut narrative = Vec::new();
        for e in report.edges.iter().filter(|e| e.significant) {
            narrative.push(format!(
                "{} and {} correlate (r {}, best lag {} samples)",
                e.metric_a,
                e.metric_b,
                fmt_sig4(e.r),
                e.best_lag
            ));
        }
        for chain in &report.lead_lag_chains {
            if chain.ordered {
                narrative.push(format!("lead-lag chain: {}", chain.metrics.join(" -> ")));
            } else {
                narrative.push(format!(
                    "correlated cluster (no unique order): {}",
                    chain.metrics.join(", ")
                ));
            }
        }

        let total_pairs = report.edges.len().max(1);
        let degenerate = report.edges.iter().filter(|e| e.degenerate).count();
        let confidence = (total_pairs - degenerate) as f64 / total_pairs as f64;
        Ok(ModuleOutput {
            findings: json!({
                "report": serde_json::to_value(&report).map_err(|e| e.to_string())?,
                "skipped": skipped_json(&skipped),
            }),
            confidence,
            narrative_seed: narrative,
        })
    }
}

// ---------------------------------------------------------------------------
// changepoint

struct ChangepointModule;

impl AnalysisModule for ChangepointModule {
    fn descriptor(&self) -> ModuleDescriptor {
        ModuleDescriptor {
            name: "changepoint".into(),
            version: VERSION.into(),
            produces: ReportKind::Changepoint,
            parameter_schema: vec![
                ParamSpec::float(
                    "penalty",
                    0.0,
                    "split acceptance penalty; 0 = 2*variance*ln(n)",
                ),
                ParamSpec::int("max_cp", 10, "maximum change points per metric"),
                ParamSpec::int("vote_window", 5, "cluster width in samples for voting"),
                ParamSpec::float(
                    "min_vote_fraction",
                    0.5,
                    "fraction of metrics that must agree",
                ),
            ],
        }
    }

    fn run(
        &self,
        experiment: &Experiment,
        params: &ResolvedParams,
    ) -> Result<ModuleOutput, String> {
        let (series, mut skipped) = filled_series(experiment, GapPolicy::Linear);
        let penalty = match params.get_f64("penalty") {
            p if p <= 0.0 => None,
            p => Some(p),
        };
        let max_cp = params.get_i64("max_cp").max(0) as usize;

        let mut per_metric = std::collections::BTreeMap::new();
        for s in &series {
            match changepoint::detect_changepoints(s, penalty, max_cp) {
                Ok(cps) => {
                    per_metric.insert(s.name.clone(), cps);
                }
                Err(e) => skipped.push((s.name.clone(), e.to_string())),
            }
        }
        let voted = changepoint::vote_aggregate(
            &per_metric,
            params.get_i64("vote_window").max(0) as usize,
            params.get_f64("min_vote_fraction"),
        );

        let mut narrative = Vec::new();
        for (metric, cps) in &per_metric {
            for cp in cps {
                narrative.push(format!(
                    "{metric}: mean shift of {} at index {}",
                    fmt_sig4(cp.delta_mean),
                    cp.index
                ));
            }
        }
        for v in &voted {
            narrative.push(format!(
                "system-level shift near index {} ({} of metrics agree: {})",
                v.window_center_index,
                fmt_sig4(v.vote_fraction),
                v.contributing_metrics.join(", ")
            ));
        }

        let confidence = if voted.is_empty() {
            1.0
        } else {
            voted.iter().map(|v| v.vote_fraction).sum::<f64>() / voted.len() as f64
        };
        Ok(ModuleOutput {
            findings: json!({
                "per_metric": per_metric,
                "voted": voted,
                "skipped": skipped_json(&skipped),
            }),
            confidence,
            narrative_seed: narrative,
        })
    }
}

// ---------------------------------------------------------------------------
// capacity

/// Threshold spec grammar: `<metric-substring>=<value>:<above|below>`.
fn parse_threshold(raw: &str) -> Result<(String, f64, CrossDirection), String> {
    let (pattern, rest) = raw
        .split_once('=')
        .ok_or_else(|| format!("bad threshold `{raw}`: expected pattern=value:direction"))?;
    let (value, dir) = rest
        .split_once(':')
        .ok_or_else(|| format!("bad threshold `{raw}`: missing :direction"))?;
    let value: f64 = value.parse().map_err(|e| format!("bad threshold value: {e}"))?;
    let dir = match dir {
        "above" => CrossDirection::Above,
        "below" => CrossDirection::Below,
        other => return Err(format!("bad threshold direction `{other}`")),
    };
    Ok((pattern.to_string(), value, dir))
}

struct CapacityModule;

impl AnalysisModule for CapacityModule {
    fn descriptor(&self) -> ModuleDescriptor {
        ModuleDescriptor {
            name: "capacity".into(),
            version: VERSION.into(),
            produces: ReportKind::Capacity,
            parameter_schema: vec![
                ParamSpec::enumerated("model", "linear", &["linear", "holt"], "trend model"),
                ParamSpec::float("holt_alpha", 0.5, "Holt level smoothing"),
                ParamSpec::float("holt_beta", 0.3, "Holt trend smoothing"),
                ParamSpec::int("horizon", 100, "forecast length in samples"),
                ParamSpec::list(
                    "thresholds",
                    &["cpu=90:above"],
                    "metric-substring=value:direction threshold rules",
                ),
                ParamSpec::float(
                    "low_util_threshold",
                    5.0,
                    "mean utilization below which downscaling is suggested",
                ),
            ],
        }
    }

    fn run(
        &self,
        experiment: &Experiment,
        params: &ResolvedParams,
    ) -> Result<ModuleOutput, String> {
        let (series, mut skipped) = filled_series(experiment, GapPolicy::Ffill);
        let model = match params.get_str("model") {
            "holt" => TrendModel::Holt,
            _ => TrendModel::Linear,
        };
        let horizon = params.get_i64("horizon").max(1) as usize;
        let thresholds: Vec<(String, f64, CrossDirection)> = params
            .get_list("thresholds")
            .iter()
            .map(|t| parse_threshold(t))
            .collect::<Result<_, _>>()?;
        let low_util = params.get_f64("low_util_threshold");

        let mut forecasts = Vec::new();
        let mut recommendations = Vec::new();
        let mut narrative = Vec::new();
        let mut confidences = Vec::new();
        for s in &series {
            let fitted = match capacity::fit_trend(
                s,
                model,
                params.get_f64("holt_alpha"),
                params.get_f64("holt_beta"),
            ) {
                Ok(f) => f,
                Err(e) => {
                    skipped.push((s.name.clone(), e.to_string()));
                    continue;
                }
            };
            let fc = capacity::forecast(&fitted, horizon);
            let crossings: Vec<_> = thresholds
                .iter()
                .filter(|(pat, _, _)| s.name.contains(pat.as_str()))
                .map(|(_, value, dir)| capacity::threshold_crossing(&fc, *value, *dir))
                .collect();
            let mean_util = crate::stats::mean(&s.values);
            let rec = capacity::recommend(&s.name, mean_util, low_util, &crossings);

            for c in &crossings {
                match c.confidence {
                    CrossConfidence::Certain => narrative.push(format!(
                        "{} forecast crosses {} at t={} ns",
                        s.name,
                        fmt_sig4(c.threshold),
                        c.predicted_time_ns.unwrap()
                    )),
                    CrossConfidence::BandOverlap => narrative.push(format!(
                        "{} uncertainty band touches {} near t={} ns",
                        s.name,
                        fmt_sig4(c.threshold),
                        c.predicted_time_ns.unwrap()
                    )),
                    CrossConfidence::None => {}
                }
            }
            if rec.rule != capacity::RuleId::NoAction {
                narrative.push(rec.text.clone());
            }

            let scale = crate::stats::mean(&s.values).abs().max(1e-9);
            confidences.push(1.0 / (1.0 + fitted.residual_std / scale));
            recommendations.push(rec.clone());
            forecasts.push(capacity::CapacityForecast {
                metric: s.name.clone(),
                model,
                horizon,
                fitted_params: fitted.params,
                residual_std: fitted.residual_std,
                point_forecast: fc.point,
                band_low: fc.band_low,
                band_high: fc.band_high,
                crossings,
                recommendation: rec,
            });
        }

        let confidence = if confidences.is_empty() {
            0.0
        } else {
            confidences.iter().sum::<f64>() / confidences.len() as f64
        };
        Ok(ModuleOutput {
            findings: json!({
                "forecasts": forecasts,
                "recommendations": recommendations,
                "skipped": skipped_json(&skipped),
            }),
            confidence,
            narrative_seed: narrative,
        })
    }
}

// ---------------------------------------------------------------------------
// idle

struct IdleModule;

impl AnalysisModule for IdleModule {
    fn descriptor(&self) -> ModuleDescriptor {
        ModuleDescriptor {
            name: "idle".into(),
            version: VERSION.into(),
            produces: ReportKind::Idle,
            parameter_schema: vec![
                ParamSpec::float("idle_threshold", 5.0, "samples strictly below are idle"),
                ParamSpec::float("min_duration_s", 60.0, "minimum idle stretch length"),
                ParamSpec::float(
                    "idle_fraction_threshold",
                    0.5,
                    "idle fraction triggering consolidation",
                ),
                ParamSpec::float(
                    "imbalance_threshold",
                    0.5,
                    "cv of per-core means triggering rebalancing",
                ),
                ParamSpec::string("core_prefix", "cpu", "metric prefix forming the core group"),
            ],
        }
    }

    fn run(
        &self,
        experiment: &Experiment,
        params: &ResolvedParams,
    ) -> Result<ModuleOutput, String> {
        let (series, skipped) = filled_series(experiment, GapPolicy::Zero);
        let threshold = params.get_f64("idle_threshold");
        let min_duration_ns = (params.get_f64("min_duration_s") * 1e9) as i64;

        let mut metrics = Vec::new();
        for s in &series {
            let intervals = idle::idle_intervals(s, threshold, min_duration_ns);
            let fraction = idle::idle_fraction(s, &intervals);
            metrics.push(idle::MetricIdle {
                metric: s.name.clone(),
                intervals,
                idle_fraction: fraction,
            });
        }

        let prefix = params.get_str("core_prefix");
        let cores: Vec<&MetricSeries> = series
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .collect();
        let imbalance = if cores.len() >= 2 {
            let (cv, means) = idle::core_imbalance(&cores);
            Some(idle::GroupImbalance {
                group: prefix.to_string(),
                cv,
                per_core_means: cores
                    .iter()
                    .zip(&means)
                    .map(|(s, &m)| (s.name.clone(), m))
                    .collect(),
            })
        } else {
            None
        };

        let recommendations = idle::recommend_idle(
            &metrics,
            imbalance.as_ref(),
            params.get_f64("idle_fraction_threshold"),
            params.get_f64("imbalance_threshold"),
        );

        let mut narrative = Vec::new();
        for m in metrics.iter().filter(|m| !m.intervals.is_empty()) {
            narrative.push(format!(
                "{}: {} idle stretches covering {} of the trace",
                m.metric,
                m.intervals.len(),
                fmt_sig4(m.idle_fraction)
            ));
        }
        if let Some(g) = &imbalance {
            narrative.push(format!(
                "core group `{}` imbalance cv {}",
                g.group,
                fmt_sig4(g.cv)
            ));
        }
        for r in &recommendations {
            narrative.push(r.text.clone());
        }

        let report = idle::IdleReport {
            metrics,
            imbalance,
            recommendations,
        };
        let recs_json = serde_json::to_value(&report.recommendations).map_err(|e| e.to_string())?;
        Ok(ModuleOutput {
            findings: json!({
                "metrics": report.metrics,
                "imbalance": report.imbalance,
                "recommendations": recs_json,
                "skipped": skipped_json(&skipped),
            }),
            confidence: 1.0,
            narrative_seed: narrative,
        })
    }
}

/// Registry with the six built-in modules.
pub fn builtin_registry() -> Registry {
    let mut registry = Registry::new();
    registry.register(Box::new(AnomalyModule)).unwrap();
    registry.register(Box::new(CapacityModule)).unwrap();
    registry.register(Box::new(ChangepointModule)).unwrap();
    registry.register(Box::new(CorrelationModule)).unwrap();
    registry.register(Box::new(IdleModule)).unwrap();
    registry.register(Box::new(MemleakModule)).unwrap();
    registry
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::ParamValue;
    use std::collections::BTreeMap;

    fn experiment(series: Vec<MetricSeries>) -> Experiment {
        Experiment::new("exp", series, Vec::new(), 0).unwrap()
    }

    fn spike_series(name: &str) -> MetricSeries {
        let mut v: Vec<f64> = (0..100).map(|i| 50.0 + ((i * 7) % 5) as f64).collect();
        v[60] = 200.0;
        MetricSeries::new(name, 0, 1_000_000_000, v)
    }

    #[test]
    fn six_builtins_listed_in_order() {
        let reg = builtin_registry();
        let names: Vec<String> = reg.list_modules().iter().map(|d| d.name.clone()).collect();
        assert_eq!(
            names,
            vec![
                "anomaly",
                "capacity",
                "changepoint",
                "correlation",
                "idle",
                "memleak"
            ]
        );
    }

    #[test]
    fn every_param_has_a_default_and_runs_unconfigured() {
        let reg = builtin_registry();
        let exp = experiment(vec![spike_series("cpu0"), spike_series("cpu1")]);
        for d in reg.list_modules() {
            let report = reg.run(&d.name, &exp, &BTreeMap::new()).unwrap();
            assert_eq!(report.module.name, d.name);
            assert!((0.0..=1.0).contains(&report.confidence));
        }
    }

    #[test]
    fn anomaly_flags_planted_spike() {
        let reg = builtin_registry();
        let exp = experiment(vec![spike_series("cpu0")]);
        let mut params = BTreeMap::new();
        params.insert("detector".to_string(), ParamValue::Str("zscore".into()));
        let report = reg.run("anomaly", &exp, &params).unwrap();
        let per_metric = report.findings["per_metric"].as_array().unwrap();
        let indices = per_metric[0]["indices"].as_array().unwrap();
        assert!(indices.iter().any(|i| i.as_u64() == Some(60)));
        assert!(!report.narrative_seed.is_empty());
    }

    #[test]
    fn changepoint_reports_planted_step() {
        let mut v = vec![10.0; 100];
        for x in &mut v[50..] {
            *x = 30.0;
        }
        let exp = experiment(vec![MetricSeries::new("m", 0, 1_000_000_000, v)]);
        let reg = builtin_registry();
        let report = reg.run("changepoint", &exp, &BTreeMap::new()).unwrap();
        assert_eq!(report.findings["per_metric"]["m"][0]["index"], 50);
        assert_eq!(report.findings["voted"][0]["window_center_index"], 50);
    }

    #[test]
    fn capacity_default_threshold_applies_to_cpu_metrics_only() {
        let ramp: Vec<f64> = (0..50).map(|i| 40.0 + i as f64).collect();
        let exp = experiment(vec![
            MetricSeries::new("cpu0", 0, 1_000_000_000, ramp.clone()),
            MetricSeries::new("disk", 0, 1_000_000_000, ramp),
        ]);
        let reg = builtin_registry();
        let report = reg.run("capacity", &exp, &BTreeMap::new()).unwrap();
        let forecasts = report.findings["forecasts"].as_array().unwrap();
        let cpu = forecasts.iter().find(|f| f["metric"] == "cpu0").unwrap();
        let disk = forecasts.iter().find(|f| f["metric"] == "disk").unwrap();
        assert_eq!(cpu["crossings"].as_array().unwrap().len(), 1);
        assert_eq!(cpu["recommendation"]["rule"], "SCALE_UP");
        assert!(disk["crossings"].as_array().unwrap().is_empty());
    }

    #[test]
    fn idle_consolidation_recommendation() {
        let quiet = MetricSeries::new("memory", 0, 1_000_000_000, vec![1.0; 200]);
        let exp = experiment(vec![quiet]);
        let reg = builtin_registry();
        let report = reg.run("idle", &exp, &BTreeMap::new()).unwrap();
        assert_eq!(report.findings["recommendations"][0]["rule"], "CONSOLIDATE");
        assert_eq!(report.confidence, 1.0);
    }

    #[test]
    fn memleak_on_event_stream() {
        use crate::ingest::{FieldValue, TraceEvent};
        use indexmap::IndexMap;
        let mk = |ts: i64, name: &str, fields: Vec<(&str, FieldValue)>| TraceEvent {
            timestamp: ts,
            stream_id: "s".into(),
            name: name.into(),
            fields: fields
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect::<IndexMap<_, _>>(),
            sequence: 0,
        };
        let events = vec![
            mk(1, "malloc", vec![
                ("ptr", FieldValue::Text("0x1".into())),
                ("size", FieldValue::Num(128.0)),
                ("callsite", FieldValue::Text("A".into())),
            ]),
            mk(2, "free", vec![("ptr", FieldValue::Text("0x1".into()))]),
            mk(3, "malloc", vec![
                ("ptr", FieldValue::Text("0x2".into())),
                ("size", FieldValue::Num(32.0)),
                ("callsite", FieldValue::Text("B".into())),
            ]),
        ];
        let exp = Experiment::new("exp", Vec::new(), events, 0).unwrap();
        let reg = builtin_registry();
        let report = reg.run("memleak", &exp, &BTreeMap::new()).unwrap();
        assert_eq!(report.findings["total_leaked_bytes"], 32);
        assert_eq!(report.findings["verdict"], "leak_suspected");
    }

    #[test]
    fn unknown_param_rejected() {
        let reg = builtin_registry();
        let exp = experiment(vec![spike_series("cpu0")]);
        let mut params = BTreeMap::new();
        params.insert("nope".to_string(), ParamValue::Int(1));
        assert!(reg.run("anomaly", &exp, &params).is_err());
    }

    #[test]
    fn reports_are_deterministic() {
        let reg = builtin_registry();
        let exp = experiment(vec![spike_series("cpu0"), spike_series("cpu1")]);
        for d in reg.list_modules() {
            let a = reg.run(&d.name, &exp, &BTreeMap::new()).unwrap().to_json();
            let b = reg.run(&d.name, &exp, &BTreeMap::new()).unwrap().to_json();
            assert_eq!(a, b, "{} report not byte-identical", d.name);
        }
    }

    #[test]
    fn threshold_grammar() {
        let (p, v, d) = parse_threshold("cpu=90:above").unwrap();
        assert_eq!((p.as_str(), v, d), ("cpu", 90.0, CrossDirection::Above));
        assert!(parse_threshold("cpu=90").is_err());
        assert!(parse_threshold("cpu:90=up").is_err());
        assert!(parse_threshold("cpu=x:above").is_err());
    }
}
