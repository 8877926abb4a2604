//! Deterministic synthetic trace generation with exact ground-truth labels,
//! used by the oracle test suites and throughput benchmarks. Features are
//! injected additively on top of Gaussian noise; labels record what was
//! injected, never what a detector found.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, FieldValue, TraceEvent};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    /// Single-sample additive spike.
    Spike { metric: String, at: usize, magnitude: f64 },
    /// Mean shift from `at` to the end of the series.
    Step { metric: String, at: usize, delta: f64 },
    /// Linear ramp over the whole series.
    Trend { metric: String, slope_per_sample: f64 },
    /// `count` allocations at `callsite` that are never freed, plus an
    /// equal number of matched alloc/free pairs for contrast.
    Leak { callsite: String, count: usize, bytes_each: u64, start: usize },
    /// Utilization forced to `level` on [start, start+len).
    Idle { metric: String, start: usize, len: usize, level: f64 },
    /// `metric_b` repeats `metric_a` shifted by `lag` samples
    /// (positive lag: a leads b).
    LagPair { metric_a: String, metric_b: String, lag: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    /// Series length in samples.
    pub duration: usize,
    pub dt_ns: i64,
    pub base_level: f64,
    pub noise_sigma: f64,
    /// Metrics generated even without features (pure noise).
    #[serde(default)]
    pub extra_metrics: Vec<String>,
    pub features: Vec<Feature>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakTruth {
    pub unmatched_count: usize,
    /// (callsite, total leaked bytes), sorted by callsite.
    pub bytes_by_callsite: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// (metric, first index of the new regime, delta).
    pub changepoints: Vec<(String, usize, f64)>,
    /// (metric, index).
    pub spikes: Vec<(String, usize)>,
    /// (metric, slope per sample).
    pub trends: Vec<(String, f64)>,
    pub leaks: LeakTruth,
    /// (metric, start index, end index exclusive).
    pub idle_windows: Vec<(String, usize, usize)>,
    /// (metric_a, metric_b, lag in samples).
    pub lags: Vec<(String, String, i64)>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two open-interval uniforms
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn validate(spec: &ScenarioSpec) -> Result<(), SynthError> {
    if spec.duration == 0 {
        return Err(SynthError::InvalidSpec("duration must be >= 1".into()));
    }
    if spec.dt_ns <= 0 {
        return Err(SynthError::InvalidSpec("dt_ns must be positive".into()));
    }
    if spec.noise_sigma < 0.0 {
        return Err(SynthError::InvalidSpec("noise_sigma must be >= 0".into()));
    }
    for f in &spec.features {
        let ok = match f {
            Feature::Spike { at, .. } | Feature::Step { at, .. } => *at < spec.duration,
            Feature::Trend { .. } => true,
            Feature::Leak { start, count, .. } => *start < spec.duration && *count > 0,
            Feature::Idle { start, len, .. } => *len > 0 && start + len <= spec.duration,
            Feature::LagPair { lag, metric_a, metric_b, .. } => {
                (lag.unsigned_abs() as usize) < spec.duration && metric_a != metric_b
            }
        };
        if !ok {
            return Err(SynthError::InvalidSpec(format!(
                "feature out of range for duration {}: {f:?}",
                spec.duration
            )));
        }
    }
    Ok(())
}

fn num_fields(pairs: &[(&str, FieldValue)]) -> IndexMap<String, FieldValue> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

/// Generate the event stream and its exact ground truth. Deterministic
/// given the seed.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<TraceEvent>, GroundTruth), SynthError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut truth = GroundTruth::default();

    // collect metric names in stable order: feature metrics first, then extras
    let mut metrics: Vec<String> = Vec::new();
    let push_metric = |metrics: &mut Vec<String>, name: &str| {
        if !metrics.iter().any(|m| m == name) {
            metrics.push(name.to_string());
        }
    };
    for f in &spec.features {
        match f {
            Feature::Spike { metric, .. }
            | Feature::Step { metric, .. }
            | Feature::Trend { metric, .. }
            | Feature::Idle { metric, .. } => push_metric(&mut metrics, metric),
            Feature::LagPair { metric_a, metric_b, .. } => {
                push_metric(&mut metrics, metric_a);
                push_metric(&mut metrics, metric_b);
            }
            Feature::Leak { .. } => {}
        }
    }
    for m in &spec.extra_metrics {
        push_metric(&mut metrics, m);
    }

    // base noise per metric
    let mut values: IndexMap<String, Vec<f64>> = IndexMap::new();
    for m in &metrics {
        let v: Vec<f64> = (0..spec.duration)
            .map(|_| spec.base_level + spec.noise_sigma * gaussian(&mut rng))
            .collect();
        values.insert(m.clone(), v);
    }

    // additive features; lag pairs applied last so they copy final shapes
    for f in &spec.features {
        match f {
            Feature::Spike { metric, at, magnitude } => {
                values[metric.as_str()][*at] += magnitude;
                truth.spikes.push((metric.clone(), *at));
            }
            Feature::Step { metric, at, delta } => {
                for v in &mut values[metric.as_str()][*at..] {
                    *v += delta;
                }
                truth.changepoints.push((metric.clone(), *at, *delta));
            }
            Feature::Trend { metric, slope_per_sample } => {
                for (i, v) in values[metric.as_str()].iter_mut().enumerate() {
                    *v += slope_per_sample * i as f64;
                }
                truth.trends.push((metric.clone(), *slope_per_sample));
            }
            Feature::Idle { metric, start, len, level } => {
                for v in &mut values[metric.as_str()][*start..*start + *len] {
                    *v = *level;
                }
                truth.idle_windows.push((metric.clone(), *start, start + len));
            }
            Feature::Leak { .. } | Feature::LagPair { .. } => {}
        }
    }
    for f in &spec.features {
        if let Feature::LagPair { metric_a, metric_b, lag } = f {
            // add a strong shared waveform so correlation dominates noise
            let carrier: Vec<f64> = (0..spec.duration)
                .map(|i| 10.0 * (i as f64 * 0.37).sin() + 6.0 * (i as f64 * 0.11).cos())
                .collect();
            for (i, v) in values[metric_a.as_str()].iter_mut().enumerate() {
                *v += carrier[i];
            }
            for (i, v) in values[metric_b.as_str()].iter_mut().enumerate() {
                let src = (i as i64 - lag).clamp(0, spec.duration as i64 - 1) as usize;
                *v += carrier[src];
            }
            truth.lags.push((metric_a.clone(), metric_b.clone(), *lag));
        }
    }

    let mut events: Vec<TraceEvent> = Vec::new();
    let mut seq = 0u64;
    for i in 0..spec.duration {
        let ts = i as i64 * spec.dt_ns;
        for m in &metrics {
            events.push(TraceEvent {
                timestamp: ts,
                stream_id: "synth".to_string(),
                name: m.clone(),
                fields: num_fields(&[("value", FieldValue::Num(values[m.as_str()][i]))]),
                sequence: seq,
            });
            seq += 1;
        }
    }

    // allocation traffic
    let mut leaked_by_site: Vec<(String, u64)> = Vec::new();
    let mut ptr_counter = 0x1000u64;
    for f in &spec.features {
        if let Feature::Leak { callsite, count, bytes_each, start } = f {
            let base_ts = (*start as i64).min(spec.duration as i64 - 1) * spec.dt_ns;
            for k in 0..*count {
                // one leaked allocation
                let leak_ptr = format!("0x{ptr_counter:x}");
                ptr_counter += 16;
                events.push(TraceEvent {
                    timestamp: base_ts + k as i64,
                    stream_id: "synth".to_string(),
                    name: "malloc".to_string(),
                    fields: num_fields(&[
                        ("ptr", FieldValue::Text(leak_ptr)),
                        ("size", FieldValue::Num(*bytes_each as f64)),
                        ("callsite", FieldValue::Text(callsite.clone())),
                    ]),
                    sequence: seq,
                });
                seq += 1;
                // one matched pair for contrast
                let ok_ptr = format!("0x{ptr_counter:x}");
                ptr_counter += 16;
                events.push(TraceEvent {
                    timestamp: base_ts + k as i64 + 1,
                    stream_id: "synth".to_string(),
                    name: "malloc".to_string(),
                    fields: num_fields(&[
                        ("ptr", FieldValue::Text(ok_ptr.clone())),
                        ("size", FieldValue::Num(64.0)),
                        ("callsite", FieldValue::Text("matched_site".to_string())),
                    ]),
                    sequence: seq,
                });
                seq += 1;
                events.push(TraceEvent {
                    timestamp: base_ts + k as i64 + 2,
                    stream_id: "synth".to_string(),
                    name: "free".to_string(),
                    fields: num_fields(&[("ptr", FieldValue::Text(ok_ptr))]),
                    sequence: seq,
                });
                seq += 1;
            }
            truth.leaks.unmatched_count += count;
            match leaked_by_site.iter_mut().find(|(s, _)| s == callsite) {
                Some((_, b)) => *b += *count as u64 * bytes_each,
                None => leaked_by_site.push((callsite.clone(), *count as u64 * bytes_each)),
            }
        }
    }
    leaked_by_site.sort();
    truth.leaks.bytes_by_callsite = leaked_by_site;

    events.sort_by_key(|e| (e.timestamp, e.sequence));
    Ok((events, truth))
}

/// Generate and write `trace.jsonl` and `ground_truth.json` under `dir`.
pub fn generate_to_files(spec: &ScenarioSpec, dir: &Path) -> Result<GroundTruth, SynthError> {
    let (events, truth) = generate(spec)?;
    std::fs::create_dir_all(dir)?;
    let f = File::create(dir.join("trace.jsonl"))?;
    ingest::write_jsonl(&events, BufWriter::new(f)).map_err(|e| {
        SynthError::InvalidSpec(format!("write failed: {e}"))
    })?;
    let mut gt = BufWriter::new(File::create(dir.join("ground_truth.json"))?);
    serde_json::to_writer_pretty(&mut gt, &truth).expect("ground truth serialization");
    gt.write_all(b"\n")?;
    gt.flush()?;
    Ok(truth)
}

/// Write an `n_events`-line JSONL event stream for ingestion throughput
/// benchmarks. Deterministic; no RNG needed.
pub fn generate_load(n_events: usize, path: &Path) -> Result<(), SynthError> {
    assert!(n_events >= 1, "n_events must be >= 1");
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..n_events {
        writeln!(
            w,
            "{{\"ts\":{},\"stream\":\"load\",\"name\":\"sched_switch\",\"fields\":{{\"cpu\":{},\"value\":{}}}}}",
            i as u64 * 1_000,
            i % 8,
            (i % 100) as f64 / 10.0
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{LoadOptions, TimeUnit, TraceFormat};
    use std::collections::HashMap;

    fn base_spec() -> ScenarioSpec {
        ScenarioSpec {
            seed: 7,
            duration: 120,
            dt_ns: 1_000_000_000,
            base_level: 50.0,
            noise_sigma: 1.0,
            extra_metrics: vec![],
            features: vec![],
        }
    }

    #[test]
    fn step_ground_truth_recorded() {
        let mut spec = base_spec();
        spec.features = vec![Feature::Step {
            metric: "cpu0".into(),
            at: 50,
            delta: 25.0,
        }];
        let (events, truth) = generate(&spec).unwrap();
        assert_eq!(truth.changepoints, vec![("cpu0".to_string(), 50, 25.0)]);
        assert_eq!(events.len(), 120);
    }

    #[test]
    fn leak_counts_exact() {
        let mut spec = base_spec();
        spec.features = vec![Feature::Leak {
            callsite: "net_rx".into(),
            count: 25,
            bytes_each: 128,
            start: 10,
        }];
        let (events, truth) = generate(&spec).unwrap();
        assert_eq!(truth.leaks.unmatched_count, 25);
        assert_eq!(
            truth.leaks.bytes_by_callsite,
            vec![("net_rx".to_string(), 3200)]
        );
        let mallocs = events.iter().filter(|e| e.name == "malloc").count();
        let frees = events.iter().filter(|e| e.name == "free").count();
        assert_eq!(mallocs, 50);
        assert_eq!(frees, 25);
    }

    #[test]
    fn same_seed_byte_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = base_spec();
        spec.features = vec![
            Feature::Spike { metric: "cpu0".into(), at: 30, magnitude: 40.0 },
            Feature::LagPair { metric_a: "a".into(), metric_b: "b".into(), lag: 3 },
        ];
        generate_to_files(&spec, &dir.path().join("one")).unwrap();
        generate_to_files(&spec, &dir.path().join("two")).unwrap();
        for f in ["trace.jsonl", "ground_truth.json"] {
            let a = std::fs::read(dir.path().join("one").join(f)).unwrap();
            let b = std::fs::read(dir.path().join("two").join(f)).unwrap();
            assert_eq!(a, b, "{f} differs across identical seeds");
        }
    }

    #[test]
    fn different_seed_different_noise() {
        let mut one = base_spec();
        one.extra_metrics = vec!["m".into()];
        let mut two = one.clone();
        two.seed = 8;
        let (ea, _) = generate(&one).unwrap();
        let (eb, _) = generate(&two).unwrap();
        assert_ne!(
            ea[0].fields["value"].as_f64(),
            eb[0].fields["value"].as_f64()
        );
    }

    #[test]
    fn output_is_ingestible_with_zero_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = base_spec();
        spec.features = vec![Feature::Step { metric: "cpu0".into(), at: 60, delta: 10.0 }];
        generate_to_files(&spec, dir.path()).unwrap();
        let (events, quality) = crate::ingest::load_trace(
            dir.path().join("trace.jsonl"),
            &LoadOptions::new(TraceFormat::Jsonl).with_unit(TimeUnit::Ns),
            &HashMap::new(),
        )
        .unwrap();
        assert_eq!(quality.dropped, 0);
        assert_eq!(events.len(), 120);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = base_spec();
        spec.duration = 0;
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));

        let mut spec = base_spec();
        spec.features = vec![Feature::Spike { metric: "m".into(), at: 500, magnitude: 1.0 }];
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));

        let mut spec = base_spec();
        spec.features = vec![Feature::LagPair { metric_a: "a".into(), metric_b: "a".into(), lag: 1 }];
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn idle_window_forced_to_level() {
        let mut spec = base_spec();
        spec.features = vec![Feature::Idle { metric: "mem".into(), start: 20, len: 30, level: 0.0 }];
        let (events, truth) = generate(&spec).unwrap();
        assert_eq!(truth.idle_windows, vec![("mem".to_string(), 20, 50)]);
        let vals: Vec<f64> = events
            .iter()
            .filter(|e| e.name == "mem")
            .map(|e| e.fields["value"].as_f64().unwrap())
            .collect();
        for &v in &vals[20..50] {
            assert_eq!(v, 0.0);
        }
        assert!(vals[19] > 10.0);
    }

    #[test]
    fn load_file_has_n_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("load.jsonl");
        generate_load(5_000, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5_000);
        let (events, quality) = crate::ingest::load_trace(
            &path,
            &LoadOptions::new(TraceFormat::Jsonl).with_unit(TimeUnit::Ns),
            &HashMap::new(),
        )
        .unwrap();
        assert_eq!(events.len(), 5_000);
        assert_eq!(quality.dropped, 0);
        assert!(quality.errors.is_empty());
    }

    #[test]
    fn ground_truth_labels_within_duration() {
        let mut spec = base_spec();
        spec.features = vec![
            Feature::Step { metric: "a".into(), at: 100, delta: 5.0 },
            Feature::Spike { metric: "b".into(), at: 119, magnitude: 9.0 },
        ];
        let (_, truth) = generate(&spec).unwrap();
        for (_, idx, _) in &truth.changepoints {
            assert!(*idx < spec.duration);
        }
        for (_, idx) in &truth.spikes {
            assert!(*idx < spec.duration);
        }
    }
}
