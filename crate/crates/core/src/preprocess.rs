//! Event-to-metric preprocessing: bucketed metric extraction, gap handling,
//! downsampling, and cross-series alignment onto a common grid. The aligned
//! bundle is an [`Experiment`], the immutable unit every analysis runs on.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, FieldValue, TraceEvent};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("field `{field}` of event `{event}` is not numeric")]
    NonNumericField { event: String, field: String },
    #[error("no events match `{0}`")]
    NoMatchingEvents(String),
    #[error("series `{0}` is entirely missing")]
    AllMissing(String),
    #[error("upsampling not supported: new dt {new_dt} is not a positive multiple of {dt}")]
    UpsampleNotSupported { dt: i64, new_dt: i64 },
    #[error("series time ranges do not overlap")]
    EmptyOverlap,
    #[error("series `{0}` does not share the experiment grid")]
    GridMismatch(String),
    #[error("invalid dt: must be > 0")]
    InvalidDt,
    #[error("no series given")]
    NoSeries,
    #[error("duplicate series name `{0}`")]
    DuplicateSeries(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Last,
    Sum,
    Count,
    Mean,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last" => Ok(Aggregation::Last),
            "sum" => Ok(Aggregation::Sum),
            "count" => Ok(Aggregation::Count),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(format!("unknown aggregation `{other}`")),
        }
    }
}

/// Provenance of a metric series: which events and field it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDesc {
    pub event_name: String,
    pub field_key: String,
    pub aggregation: Aggregation,
}

/// A named, unit-tagged, uniformly sampled numeric time series.
/// `values[i]` samples the interval `[t0 + i*dt, t0 + (i+1)*dt)`; NaN marks
/// a missing sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub unit: String,
    pub t0: i64,
    pub dt: i64,
    pub values: Vec<f64>,
    pub source: Option<SourceDesc>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, t0: i64, dt: i64, values: Vec<f64>) -> MetricSeries {
        assert!(dt > 0, "dt must be positive");
        MetricSeries {
            name: name.into(),
            unit: String::new(),
            t0,
            dt,
            values,
            source: None,
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Exclusive end of the covered time range.
    pub fn end(&self) -> i64 {
        self.t0 + self.len() as i64 * self.dt
    }

    /// Timestamp (ns) of sample `i`.
    pub fn timestamp_at(&self, i: usize) -> i64 {
        self.t0 + i as i64 * self.dt
    }

    /// Values with NaN filtered out.
    pub fn present_values(&self) -> Vec<f64> {
        self.values.iter().copied().filter(|v| !v.is_nan()).collect()
    }
}

/// How to turn a stream of events into one metric series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub event_name: String,
    pub field_key: String,
    pub aggregation: Aggregation,
    pub dt: i64,
}

/// Bucket matching events by `floor((ts - t0) / dt)` and aggregate each
/// bucket; empty buckets become NaN. `t0` is the first matching timestamp
/// rounded down to a multiple of `dt`.
pub fn extract_metric(
    events: &[TraceEvent],
    spec: &MetricSpec,
) -> Result<MetricSeries, PreprocessError> {
    if spec.dt <= 0 {
        return Err(PreprocessError::InvalidDt);
    }
    let mut points: Vec<(i64, f64)> = Vec::new();
    for ev in events {
        if ev.name != spec.event_name {
            continue;
        }
        let Some(value) = ev.fields.get(&spec.field_key) else {
            continue;
        };
        let num = match spec.aggregation {
            Aggregation::Count => 1.0,
            _ => match value {
                FieldValue::Num(v) => *v,
                _ => {
                    return Err(PreprocessError::NonNumericField {
                        event: spec.event_name.clone(),
                        field: spec.field_key.clone(),
                    })
                }
            },
        };
        points.push((ev.timestamp, num));
    }
    if points.is_empty() {
        return Err(PreprocessError::NoMatchingEvents(format!(
            "{}.{}",
            spec.event_name, spec.field_key
        )));
    }
    points.sort_by_key(|(ts, _)| *ts);
    let t0 = points[0].0.div_euclid(spec.dt) * spec.dt;
    let last_bucket = (points[points.len() - 1].0 - t0) / spec.dt;
    let n = last_bucket as usize + 1;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (ts, v) in points {
        buckets[((ts - t0) / spec.dt) as usize].push(v);
    }
    let values = buckets
        .iter()
        .map(|b| aggregate(b, spec.aggregation))
        .collect();
    Ok(MetricSeries {
        name: spec.name.clone(),
        unit: spec.unit.clone(),
        t0,
        dt: spec.dt,
        values,
        source: Some(SourceDesc {
            event_name: spec.event_name.clone(),
            field_key: spec.field_key.clone(),
            aggregation: spec.aggregation,
        }),
    })
}

fn aggregate(bucket: &[f64], agg: Aggregation) -> f64 {
    if bucket.is_empty() {
        return f64::NAN;
    }
    match agg {
        Aggregation::Last => bucket[bucket.len() - 1],
        Aggregation::Sum => bucket.iter().sum(),
        Aggregation::Count => bucket.len() as f64,
        Aggregation::Mean => bucket.iter().sum::<f64>() / bucket.len() as f64,
        Aggregation::Max => bucket.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapPolicy {
    Ffill,
    Linear,
    Zero,
    Keep,
}

impl std::str::FromStr for GapPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ffill" => Ok(GapPolicy::Ffill),
            "linear" => Ok(GapPolicy::Linear),
            "zero" => Ok(GapPolicy::Zero),
            "keep" => Ok(GapPolicy::Keep),
            other => Err(format!("unknown gap policy `{other}`")),
        }
    }
}

/// Replace NaN samples according to `policy`. `ffill` carries the last seen
/// value forward (leading NaNs take the first observed value); `linear`
/// interpolates between nearest non-NaN neighbors with edge clamping.
pub fn fill_gaps(series: &MetricSeries, policy: GapPolicy) -> Result<MetricSeries, PreprocessError> {
    if policy == GapPolicy::Keep {
        return Ok(series.clone());
    }
    if !series.is_empty() && series.values.iter().all(|v| v.is_nan()) {
        return Err(PreprocessError::AllMissing(series.name.clone()));
    }
    let mut out = series.clone();
    match policy {
        GapPolicy::Zero => {
            for v in &mut out.values {
                if v.is_nan() {
                    *v = 0.0;
                }
            }
        }
        GapPolicy::Ffill => {
            let first = series.values.iter().copied().find(|v| !v.is_nan());
            let mut last = first.unwrap_or(0.0);
            for v in &mut out.values {
                if v.is_nan() {
                    *v = last;
                } else {
                    last = *v;
                }
            }
        }
        GapPolicy::Linear => {
            let n = out.values.len();
            let mut i = 0;
            while i < n {
                if !out.values[i].is_nan() {
                    i += 1;
                    continue;
                }
                // [i, j) is a NaN run
                let mut j = i;
                while j < n && out.values[j].is_nan() {
                    j += 1;
                }
                let left = if i > 0 { Some(out.values[i - 1]) } else { None };
                let right = if j < n { Some(out.values[j]) } else { None };
                for k in i..j {
                    out.values[k] = match (left, right) {
                        (Some(l), Some(r)) => {
                            let span = (j - i + 1) as f64;
                            let frac = (k - i + 1) as f64 / span;
                            l + (r - l) * frac
                        }
                        (Some(l), None) => l,
                        (None, Some(r)) => r,
                        (None, None) => unreachable!("all-NaN handled above"),
                    };
                }
                i = j;
            }
        }
        GapPolicy::Keep => unreachable!(),
    }
    Ok(out)
}

/// Downsample to `new_dt` (a positive multiple of the current `dt`),
/// aggregating each bucket while ignoring NaN; an all-NaN bucket stays NaN.
pub fn resample(
    series: &MetricSeries,
    new_dt: i64,
    agg: Aggregation,
) -> Result<MetricSeries, PreprocessError> {
    if new_dt <= 0 || new_dt % series.dt != 0 {
        return Err(PreprocessError::UpsampleNotSupported {
            dt: series.dt,
            new_dt,
        });
    }
    let factor = (new_dt / series.dt) as usize;
    if factor == 1 {
        return Ok(series.clone());
    }
    let mut out = series.clone();
    out.dt = new_dt;
    out.values = series
        .values
        .chunks(factor)
        .map(|chunk| {
            let present: Vec<f64> = chunk.iter().copied().filter(|v| !v.is_nan()).collect();
            if present.is_empty() {
                f64::NAN
            } else {
                match agg {
                    Aggregation::Mean => present.iter().sum::<f64>() / present.len() as f64,
                    Aggregation::Max => present.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Aggregation::Last => present[present.len() - 1],
                    Aggregation::Sum => present.iter().sum(),
                    Aggregation::Count => present.len() as f64,
                }
            }
        })
        .collect();
    Ok(out)
}

/// Align a set of series onto a common grid: start = latest member start,
/// dt = least common multiple of member dts, end = earliest member end.
/// Members are trimmed to the overlap window and bucket-averaged onto the
/// common grid. Analyses never see fabricated history: only the
/// intersection window survives.
pub fn align(series_set: &[MetricSeries]) -> Result<Vec<MetricSeries>, PreprocessError> {
    if series_set.is_empty() {
        return Err(PreprocessError::NoSeries);
    }
    let common_t0 = series_set.iter().map(|s| s.t0).max().unwrap();
    let common_end = series_set.iter().map(|s| s.end()).min().unwrap();
    let mut common_dt = series_set[0].dt;
    for s in &series_set[1..] {
        common_dt = lcm(common_dt, s.dt);
    }
    let len = (common_end - common_t0).div_euclid(common_dt);
    if len <= 0 {
        return Err(PreprocessError::EmptyOverlap);
    }
    let window_end = common_t0 + len * common_dt;
    let mut out = Vec::with_capacity(series_set.len());
    for s in series_set {
        let mut sums = vec![0.0; len as usize];
        let mut counts = vec![0usize; len as usize];
        for (i, &v) in s.values.iter().enumerate() {
            let t = s.timestamp_at(i);
            if t < common_t0 || t >= window_end || v.is_nan() {
                continue;
            }
            let k = ((t - common_t0) / common_dt) as usize;
            sums[k] += v;
            counts[k] += 1;
        }
        let values: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect();
        let mut aligned = s.clone();
        aligned.t0 = common_t0;
        aligned.dt = common_dt;
        aligned.values = values;
        out.push(aligned);
    }
    Ok(out)
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: i64, b: i64) -> i64 {
    a / gcd(a, b) * b
}

/// Immutable bundle of aligned metric series plus the retained raw events
/// (kept for pointer-lifetime analysis).
#[derive(Debug, Clone)]
pub struct Experiment {
    id: String,
    series: BTreeMap<String, MetricSeries>,
    events: Vec<TraceEvent>,
    created_at_ns: i64,
}

impl Experiment {
    /// Build an experiment from already-aligned series; rejects any series
    /// violating the equal-grid invariant. Events-only experiments (for
    /// allocation analysis) are allowed; fully empty ones are not.
    pub fn new(
        id: impl Into<String>,
        series: Vec<MetricSeries>,
        events: Vec<TraceEvent>,
        created_at_ns: i64,
    ) -> Result<Experiment, PreprocessError> {
        if series.is_empty() && events.is_empty() {
            return Err(PreprocessError::NoSeries);
        }
        let (t0, dt, len) = series
            .first()
            .map(|s| (s.t0, s.dt, s.len()))
            .unwrap_or((0, 1, 0));
        let mut map = BTreeMap::new();
        for s in series {
            if s.t0 != t0 || s.dt != dt || s.len() != len {
                return Err(PreprocessError::GridMismatch(s.name.clone()));
            }
            let name = s.name.clone();
            if map.insert(name.clone(), s).is_some() {
                return Err(PreprocessError::DuplicateSeries(name));
            }
        }
        Ok(Experiment {
            id: id.into(),
            series: map,
            events,
            created_at_ns,
        })
    }

    /// Convenience: align the given series first, then construct.
    pub fn from_unaligned(
        id: impl Into<String>,
        series: Vec<MetricSeries>,
        events: Vec<TraceEvent>,
        created_at_ns: i64,
    ) -> Result<Experiment, PreprocessError> {
        let aligned = align(&series)?;
        Experiment::new(id, aligned, events, created_at_ns)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn created_at_ns(&self) -> i64 {
        self.created_at_ns
    }

    pub fn t0(&self) -> i64 {
        self.series.values().next().map(|s| s.t0).unwrap_or(0)
    }

    pub fn dt(&self) -> i64 {
        self.series.values().next().map(|s| s.dt).unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.series.values().next().map(|s| s.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn series(&self) -> &BTreeMap<String, MetricSeries> {
        &self.series
    }

    pub fn get(&self, name: &str) -> Option<&MetricSeries> {
        self.series.get(name)
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.series.keys().cloned().collect()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Persist to a directory: `manifest.json`, one `t,value` CSV per
    /// series under `series/`, and retained events as `events.jsonl`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PreprocessError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("series"))?;
        let mut index = Vec::new();
        for (i, (name, s)) in self.series.iter().enumerate() {
            let file = format!("{:03}_{}.csv", i, sanitize(name));
            let mut w = fs::File::create(dir.join("series").join(&file))?;
            writeln!(w, "t,value")?;
            for (k, v) in s.values.iter().enumerate() {
                if v.is_nan() {
                    writeln!(w, "{},", s.timestamp_at(k))?;
                } else {
                    writeln!(w, "{},{}", s.timestamp_at(k), v)?;
                }
            }
            index.push(SeriesEntry {
                name: name.clone(),
                unit: s.unit.clone(),
                file,
                source: s.source.clone(),
            });
        }
        let manifest = Manifest {
            id: self.id.clone(),
            created_at_ns: self.created_at_ns,
            t0: self.t0(),
            dt: self.dt(),
            len: self.len(),
            series: index,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| PreprocessError::Manifest(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json)?;
        let mut w = fs::File::create(dir.join("events.jsonl"))?;
        ingest::write_jsonl(&self.events, &mut w)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Experiment, PreprocessError> {
        let dir = dir.as_ref();
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
                .map_err(|e| PreprocessError::Manifest(e.to_string()))?;
        let mut series = Vec::new();
        for entry in &manifest.series {
            let path = dir.join("series").join(&entry.file);
            let reader = BufReader::new(fs::File::open(&path)?);
            let mut values = Vec::new();
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if lineno == 0 {
                    continue; // header
                }
                let value = line.split(',').nth(1).unwrap_or("");
                if value.is_empty() {
                    values.push(f64::NAN);
                } else {
                    values.push(value.parse::<f64>().map_err(|e| {
                        PreprocessError::Manifest(format!("{}: {e}", entry.file))
                    })?);
                }
            }
            let mut s = MetricSeries::new(&entry.name, manifest.t0, manifest.dt, values)
                .with_unit(&entry.unit);
            s.source = entry.source.clone();
            series.push(s);
        }
        let events_path = dir.join("events.jsonl");
        let mut events = Vec::new();
        if events_path.exists() {
            let opts = ingest::LoadOptions::new(ingest::TraceFormat::Jsonl)
                .with_unit(ingest::TimeUnit::Ns);
            ingest::load_trace_chunked(&events_path, &opts, &Default::default(), |chunk| {
                events.extend(chunk)
            })?;
        }
        Experiment::new(manifest.id, series, events, manifest.created_at_ns)
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SeriesEntry {
    name: String,
    unit: String,
    file: String,
    source: Option<SourceDesc>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    id: String,
    created_at_ns: i64,
    t0: i64,
    dt: i64,
    len: usize,
    series: Vec<SeriesEntry>,
}
