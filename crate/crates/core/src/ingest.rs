//! Trace file ingestion: CSV and JSON-lines readers that normalize
//! heterogeneous field-assignment syntaxes (`a:=b`, `a=b`, `a:b`, `a=[b,c]`)
//! and timestamps into a standardized [`TraceEvent`] stream.
//!
//! File schemas:
//! - CSV: header `ts,stream,name[,fields][,k1,k2,...]`. The `ts` column may
//!   carry a unit suffix (`ts:ns`, `ts:us`, `ts:ms`, `ts:s`); without one,
//!   integer timestamps require [`LoadOptions::ts_unit`] and string
//!   timestamps must be ISO-8601. A `fields` column holds space-separated
//!   assignment tokens; any other column becomes a scalar field.
//! - JSONL: one object per line with keys `ts`, `stream`, `name`, optional
//!   `fields` (object); any other key becomes a field.
//!
//! Malformed lines are collected into a [`QualityReport`] instead of
//! aborting, unless more than half the lines fail.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CHUNK_SIZE: usize = 65_536;

/// Cap on per-line error details retained in the quality report; the
/// per-reason histogram and counters are always exact.
const MAX_RETAINED_ERRORS: usize = 1_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed field token `{0}`")]
    MalformedField(String),
    #[error("unparsable timestamp `{0}`")]
    UnparsableTimestamp(String),
    #[error("integer timestamp with no declared unit (declare via header suffix or ts_unit option)")]
    AmbiguousUnit,
    #[error("missing required column/key `{0}`")]
    MissingColumn(String),
    #[error("invalid stream config: {0}")]
    InvalidStreamConfig(String),
    #[error("too many malformed lines: {dropped} of {total}")]
    TooManyErrors { dropped: u64, total: u64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One normalized field value. Lists nest at most one level, matching the
/// `a=[b,c]` form; list elements are scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Num(f64),
    Text(String),
    List(Vec<FieldValue>),
}

impl FieldValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FieldValue::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            FieldValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Field rendered as text regardless of kind (used for pointer ids,
    /// which appear both as hex strings and raw integers in the wild).
    pub fn to_text(&self) -> String {
        match self {
            FieldValue::Text(s) => s.clone(),
            FieldValue::Num(v) => {
                if v.fract() == 0.0 && v.abs() < 9e15 {
                    format!("{}", *v as i64)
                } else {
                    format!("{v}")
                }
            }
            FieldValue::List(_) => String::new(),
        }
    }
}

/// One timestamped occurrence with normalized key/value fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Nanoseconds since the Unix epoch, UTC. Always >= 0 after ingest.
    pub timestamp: i64,
    pub stream_id: String,
    pub name: String,
    pub fields: IndexMap<String, FieldValue>,
    /// Monotonically increasing per stream, assigned in file order.
    pub sequence: u64,
}

/// Per-stream clock correction applied during timestamp normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamConfig {
    pub stream_id: String,
    #[serde(default)]
    pub clock_offset_ns: i64,
    #[serde(default)]
    pub timezone_offset_minutes: i32,
}

impl StreamConfig {
    pub fn new(stream_id: impl Into<String>) -> Self {
        StreamConfig {
            stream_id: stream_id.into(),
            clock_offset_ns: 0,
            timezone_offset_minutes: 0,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.timezone_offset_minutes.abs() > 14 * 60 {
            return Err(IngestError::InvalidStreamConfig(format!(
                "timezone offset {} minutes out of range",
                self.timezone_offset_minutes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Ns,
    Us,
    Ms,
    S,
}

impl TimeUnit {
    pub fn to_ns(self, v: i64) -> i64 {
        match self {
            TimeUnit::Ns => v,
            TimeUnit::Us => v * 1_000,
            TimeUnit::Ms => v * 1_000_000,
            TimeUnit::S => v * 1_000_000_000,
        }
    }

    pub fn from_suffix(s: &str) -> Option<TimeUnit> {
        match s {
            "ns" => Some(TimeUnit::Ns),
            "us" => Some(TimeUnit::Us),
            "ms" => Some(TimeUnit::Ms),
            "s" => Some(TimeUnit::S),
            _ => None,
        }
    }
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TimeUnit::Ns => "ns",
            TimeUnit::Us => "us",
            TimeUnit::Ms => "ms",
            TimeUnit::S => "s",
        };
        f.write_str(s)
    }
}

/// A raw timestamp as it appears in a trace file.
#[derive(Debug, Clone, PartialEq)]
pub enum RawTimestamp {
    /// Integer count; the unit must be declared (file header or options).
    Int(i64),
    /// ISO-8601 text, with or without an explicit zone.
    Iso(String),
}

/// Strict numeric grammar: optional sign, digits, optional decimal part,
/// optional exponent. Hex ids and the like stay text.
fn parse_numeric(s: &str) -> Option<f64> {
    let b = s.as_bytes();
    if b.is_empty() {
        return None;
    }
    let mut i = 0;
    if b[i] == b'+' || b[i] == b'-' {
        i += 1;
    }
    let digits_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i == digits_start {
        return None;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == frac_start {
            return None;
        }
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return None;
        }
    }
    if i != b.len() {
        return None;
    }
    s.parse::<f64>().ok()
}

fn parse_scalar(s: &str) -> FieldValue {
    match parse_numeric(s) {
        Some(v) => FieldValue::Num(v),
        None => FieldValue::Text(s.to_string()),
    }
}

/// Parse one field-assignment token. Recognizes `k:=v`, `k=v` and `k:v`,
/// longest separator first at the leftmost separator position; `[x,y,...]`
/// values parse to a list of scalars.
pub fn parse_field_assignment(token: &str) -> Result<(String, FieldValue), IngestError> {
    let bytes = token.as_bytes();
    let mut sep: Option<(usize, usize)> = None; // (index, len)
    for i in 0..bytes.len() {
        match bytes[i] {
            b':' if i + 1 < bytes.len() && bytes[i + 1] == b'=' => {
                sep = Some((i, 2));
                break;
            }
            b':' | b'=' => {
                sep = Some((i, 1));
                break;
            }
            _ => {}
        }
    }
    let (idx, len) = sep.ok_or_else(|| IngestError::MalformedField(token.to_string()))?;
    let key = &token[..idx];
    if key.is_empty() {
        return Err(IngestError::MalformedField(token.to_string()));
    }
    let value = &token[idx + len..];
    Ok((key.to_string(), parse_value(value)))
}

fn parse_value(value: &str) -> FieldValue {
    let trimmed = value.trim();
    if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() >= 2 {
        let inner = &trimmed[1..trimmed.len() - 1];
        if inner.trim().is_empty() {
            return FieldValue::List(Vec::new());
        }
        let items = inner.split(',').map(|p| parse_scalar(p.trim())).collect();
        return FieldValue::List(items);
    }
    parse_scalar(trimmed)
}

/// Normalize a raw timestamp to nanoseconds since the Unix epoch (UTC).
///
/// Integer timestamps: `unit` must be declared. Result is
/// `raw_ns - timezone_offset_minutes*60e9 + clock_offset_ns`.
/// ISO-8601 with an explicit zone is already absolute and ignores both
/// offsets; zoneless ISO-8601 is treated as stream-local time and gets the
/// same correction as integers.
pub fn normalize_timestamp(
    raw: &RawTimestamp,
    unit: Option<TimeUnit>,
    cfg: &StreamConfig,
) -> Result<i64, IngestError> {
    cfg.validate()?;
    match raw {
        RawTimestamp::Int(v) => {
            let unit = unit.ok_or(IngestError::AmbiguousUnit)?;
            let ns = unit.to_ns(*v);
            Ok(ns - cfg.timezone_offset_minutes as i64 * 60 * 1_000_000_000 + cfg.clock_offset_ns)
        }
        RawTimestamp::Iso(s) => {
            if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
                return dt
                    .timestamp_nanos_opt()
                    .ok_or_else(|| IngestError::UnparsableTimestamp(s.clone()));
            }
            let naive = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
                .or_else(|_| chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
                .map_err(|_| IngestError::UnparsableTimestamp(s.clone()))?;
            let ns = naive
                .and_utc()
                .timestamp_nanos_opt()
                .ok_or_else(|| IngestError::UnparsableTimestamp(s.clone()))?;
            Ok(ns - cfg.timezone_offset_minutes as i64 * 60 * 1_000_000_000 + cfg.clock_offset_ns)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub format: TraceFormat,
    /// Unit for integer timestamps when the file itself declares none.
    pub ts_unit: Option<TimeUnit>,
    pub chunk_size: usize,
}

impl LoadOptions {
    pub fn new(format: TraceFormat) -> Self {
        LoadOptions {
            format,
            ts_unit: None,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }

    pub fn with_unit(mut self, unit: TimeUnit) -> Self {
        self.ts_unit = Some(unit);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineError {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub min_ns: i64,
    pub max_ns: i64,
}

/// Ingestion quality summary: counts, per-reason drop histogram, per-stream
/// time ranges, and (capped) per-line error detail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub events: u64,
    pub dropped: u64,
    pub reasons: BTreeMap<String, u64>,
    pub stream_ranges: BTreeMap<String, TimeRange>,
    pub errors: Vec<LineError>,
}

impl QualityReport {
    /// Build a report from already-ingested events plus collected errors.
    pub fn from_events(events: &[TraceEvent], errors: &[LineError]) -> QualityReport {
        let mut report = QualityReport::default();
        for ev in events {
            report.record_event(ev);
        }
        for e in errors {
            report.record_error(e.line, &e.reason);
        }
        report
    }

    fn record_event(&mut self, ev: &TraceEvent) {
        self.events += 1;
        self.stream_ranges
            .entry(ev.stream_id.clone())
            .and_modify(|r| {
                r.min_ns = r.min_ns.min(ev.timestamp);
                r.max_ns = r.max_ns.max(ev.timestamp);
            })
            .or_insert(TimeRange {
                min_ns: ev.timestamp,
                max_ns: ev.timestamp,
            });
    }

    fn record_error(&mut self, line: u64, reason: &str) {
        self.dropped += 1;
        *self.reasons.entry(reason.to_string()).or_insert(0) += 1;
        if self.errors.len() < MAX_RETAINED_ERRORS {
            self.errors.push(LineError {
                line,
                reason: reason.to_string(),
            });
        }
    }
}

/// Short machine-readable reason tags used in the quality histogram.
fn reason_tag(err: &IngestError) -> &'static str {
    match err {
        IngestError::MalformedField(_) => "MalformedField",
        IngestError::UnparsableTimestamp(_) => "UnparsableTimestamp",
        IngestError::AmbiguousUnit => "AmbiguousUnit",
        IngestError::MissingColumn(_) => "MissingColumn",
        _ => "ParseError",
    }
}

struct StreamState {
    next_sequence: u64,
}

/// Load a whole trace file into memory. For bounded-memory processing of
/// large files use [`load_trace_chunked`].
pub fn load_trace(
    path: impl AsRef<Path>,
    opts: &LoadOptions,
    configs: &HashMap<String, StreamConfig>,
) -> Result<(Vec<TraceEvent>, QualityReport), IngestError> {
    let mut all = Vec::new();
    let quality = load_trace_chunked(path, opts, configs, |chunk| all.extend(chunk))?;
    Ok((all, quality))
}

/// Streaming loader: reads the file line by line, buffers at most one chunk
/// of `opts.chunk_size` events internally, and hands each full chunk to
/// `sink`. Per-line parse failures are recorded in the returned quality
/// report; the load aborts with `TooManyErrors` only when more than half of
/// all data lines fail.
pub fn load_trace_chunked(
    path: impl AsRef<Path>,
    opts: &LoadOptions,
    configs: &HashMap<String, StreamConfig>,
    mut sink: impl FnMut(Vec<TraceEvent>),
) -> Result<QualityReport, IngestError> {
    let file = File::open(path.as_ref())?;
    load_trace_from_reader(file, opts, configs, &mut sink)
}

pub fn load_trace_from_reader(
    reader: impl Read,
    opts: &LoadOptions,
    configs: &HashMap<String, StreamConfig>,
    sink: &mut dyn FnMut(Vec<TraceEvent>),
) -> Result<QualityReport, IngestError> {
    let chunk_size = opts.chunk_size.max(1);
    let mut quality = QualityReport::default();
    let mut chunk: Vec<TraceEvent> = Vec::with_capacity(chunk_size.min(1 << 16));
    let mut seq: HashMap<String, StreamState> = HashMap::new();
    let default_cfg = StreamConfig::new("");

    let mut lines = BufReader::new(reader).lines();
    let mut line_no: u64 = 0;

    // CSV column layout, parsed from the header line.
    let mut csv_layout: Option<CsvLayout> = None;
    if opts.format == TraceFormat::Csv {
        match lines.next() {
            Some(header) => {
                let header = header?;
                csv_layout = Some(CsvLayout::parse(&header)?);
                line_no = 1;
            }
            None => return Ok(quality), // empty file
        }
    }

    for line in lines {
        let line = line?;
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match opts.format {
            TraceFormat::Csv => {
                parse_csv_line(&line, csv_layout.as_ref().unwrap(), opts, configs, &default_cfg)
            }
            TraceFormat::Jsonl => parse_jsonl_line(&line, opts, configs, &default_cfg),
        };
        match parsed {
            Ok(mut ev) => {
                if ev.timestamp < 0 {
                    quality.record_error(line_no, "NegativeTimestamp");
                    continue;
                }
                let state = seq
                    .entry(ev.stream_id.clone())
                    .or_insert(StreamState { next_sequence: 0 });
                ev.sequence = state.next_sequence;
                state.next_sequence += 1;
                quality.record_event(&ev);
                chunk.push(ev);
                if chunk.len() >= chunk_size {
                    sink(std::mem::replace(
                        &mut chunk,
                        Vec::with_capacity(chunk_size.min(1 << 16)),
                    ));
                }
            }
            Err(err) => quality.record_error(line_no, reason_tag(&err)),
        }
    }
    if !chunk.is_empty() {
        sink(chunk);
    }

    let total = quality.events + quality.dropped;
    if total > 0 && quality.dropped * 2 > total {
        return Err(IngestError::TooManyErrors {
            dropped: quality.dropped,
            total,
        });
    }
    Ok(quality)
}

struct CsvLayout {
    ts_col: usize,
    ts_unit: Option<TimeUnit>,
    stream_col: usize,
    name_col: usize,
    fields_col: Option<usize>,
    extra: Vec<(usize, String)>,
}

impl CsvLayout {
    fn parse(header: &str) -> Result<CsvLayout, IngestError> {
        let cols = split_csv(header);
        let mut ts_col = None;
        let mut ts_unit = None;
        let mut stream_col = None;
        let mut name_col = None;
        let mut fields_col = None;
        let mut extra = Vec::new();
        for (i, raw) in cols.iter().enumerate() {
            let col = raw.trim();
            if col == "ts" {
                ts_col = Some(i);
            } else if let Some(suffix) = col.strip_prefix("ts:") {
                ts_col = Some(i);
                ts_unit = TimeUnit::from_suffix(suffix);
            } else if col == "stream" {
                stream_col = Some(i);
            } else if col == "name" {
                name_col = Some(i);
            } else if col == "fields" {
                fields_col = Some(i);
            } else {
                extra.push((i, col.to_string()));
            }
        }
        Ok(CsvLayout {
            ts_col: ts_col.ok_or_else(|| IngestError::MissingColumn("ts".into()))?,
            ts_unit,
            stream_col: stream_col.ok_or_else(|| IngestError::MissingColumn("stream".into()))?,
            name_col: name_col.ok_or_else(|| IngestError::MissingColumn("name".into()))?,
            fields_col,
            extra,
        })
    }
}

/// Minimal RFC-4180 splitter (double-quote quoting, `""` escapes).
fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        if in_quotes {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    in_quotes = false;
                }
            } else {
                cur.push(c);
            }
        } else {
            match c {
                '"' => in_quotes = true,
                ',' => out.push(std::mem::take(&mut cur)),
                _ => cur.push(c),
            }
        }
    }
    out.push(cur);
    out
}

fn csv_quote(cell: &str) -> String {
    if cell.contains(',') || cell.contains('"') || cell.contains('\n') {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

fn parse_ts_cell(
    cell: &str,
    declared: Option<TimeUnit>,
    opts: &LoadOptions,
    cfg: &StreamConfig,
) -> Result<i64, IngestError> {
    let raw = if let Ok(v) = cell.trim().parse::<i64>() {
        RawTimestamp::Int(v)
    } else {
        RawTimestamp::Iso(cell.trim().to_string())
    };
    normalize_timestamp(&raw, declared.or(opts.ts_unit), cfg)
}

fn parse_csv_line(
    line: &str,
    layout: &CsvLayout,
    opts: &LoadOptions,
    configs: &HashMap<String, StreamConfig>,
    default_cfg: &StreamConfig,
) -> Result<TraceEvent, IngestError> {
    let cells = split_csv(line);
    let get = |i: usize| -> Result<&str, IngestError> {
        cells
            .get(i)
            .map(|s| s.as_str())
            .ok_or_else(|| IngestError::MalformedField(line.to_string()))
    };
    let stream_id = get(layout.stream_col)?.trim().to_string();
    let cfg = configs.get(&stream_id).unwrap_or(default_cfg);
    let timestamp = parse_ts_cell(get(layout.ts_col)?, layout.ts_unit, opts, cfg)?;
    let name = get(layout.name_col)?.trim().to_string();
    if name.is_empty() {
        return Err(IngestError::MissingColumn("name".into()));
    }

    let mut fields = IndexMap::new();
    if let Some(fc) = layout.fields_col {
        let tokens = get(fc)?;
        for token in tokens.split_whitespace() {
            let (k, v) = parse_field_assignment(token)?;
            fields.insert(k, v);
        }
    }
    for (i, key) in &layout.extra {
        if let Some(cell) = cells.get(*i) {
            if !cell.is_empty() {
                fields.insert(key.clone(), parse_scalar(cell.trim()));
            }
        }
    }
    Ok(TraceEvent {
        timestamp,
        stream_id,
        name,
        fields,
        sequence: 0,
    })
}

fn json_to_field_value(v: &serde_json::Value) -> Result<FieldValue, IngestError> {
    match v {
        serde_json::Value::Number(n) => Ok(FieldValue::Num(
            n.as_f64()
                .ok_or_else(|| IngestError::MalformedField(n.to_string()))?,
        )),
        serde_json::Value::String(s) => Ok(FieldValue::Text(s.clone())),
        serde_json::Value::Bool(b) => Ok(FieldValue::Num(if *b { 1.0 } else { 0.0 })),
        serde_json::Value::Array(items) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match json_to_field_value(item)? {
                    FieldValue::List(_) => {
                        return Err(IngestError::MalformedField("nested list".into()))
                    }
                    scalar => out.push(scalar),
                }
            }
            Ok(FieldValue::List(out))
        }
        other => Err(IngestError::MalformedField(other.to_string())),
    }
}

fn parse_jsonl_line(
    line: &str,
    opts: &LoadOptions,
    configs: &HashMap<String, StreamConfig>,
    default_cfg: &StreamConfig,
) -> Result<TraceEvent, IngestError> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| IngestError::MalformedField(format!("invalid json: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| IngestError::MalformedField("not a json object".into()))?;

    let stream_id = obj
        .get("stream")
        .and_then(|v| v.as_str())
        .ok_or_else(|| IngestError::MissingColumn("stream".into()))?
        .to_string();
    let cfg = configs.get(&stream_id).unwrap_or(default_cfg);

    let ts_val = obj
        .get("ts")
        .ok_or_else(|| IngestError::MissingColumn("ts".into()))?;
    let raw = match ts_val {
        serde_json::Value::Number(n) => RawTimestamp::Int(
            n.as_i64()
                .ok_or_else(|| IngestError::UnparsableTimestamp(n.to_string()))?,
        ),
        serde_json::Value::String(s) => RawTimestamp::Iso(s.clone()),
        other => return Err(IngestError::UnparsableTimestamp(other.to_string())),
    };
    let timestamp = normalize_timestamp(&raw, opts.ts_unit, cfg)?;

    let name = obj
        .get("name")
        .and_then(|v| v.as_str())
        .ok_or_else(|| IngestError::MissingColumn("name".into()))?
        .to_string();

    let mut fields = IndexMap::new();
    if let Some(f) = obj.get("fields") {
        let fobj = f
            .as_object()
            .ok_or_else(|| IngestError::MalformedField("fields must be an object".into()))?;
        for (k, v) in fobj {
            if k.is_empty() {
                return Err(IngestError::MalformedField("empty field key".into()));
            }
            fields.insert(k.clone(), json_to_field_value(v)?);
        }
    }
    for (k, v) in obj {
        if k == "ts" || k == "stream" || k == "name" || k == "fields" {
            continue;
        }
        fields.insert(k.clone(), json_to_field_value(v)?);
    }

    Ok(TraceEvent {
        timestamp,
        stream_id,
        name,
        fields,
        sequence: 0,
    })
}

fn field_value_to_json(v: &FieldValue) -> serde_json::Value {
    match v {
        FieldValue::Num(x) => serde_json::Number::from_f64(*x)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null),
        FieldValue::Text(s) => serde_json::Value::String(s.clone()),
        FieldValue::List(items) => {
            serde_json::Value::Array(items.iter().map(field_value_to_json).collect())
        }
    }
}

/// Serialize events to the canonical JSONL schema (`ts` in nanoseconds).
/// Re-ingesting the output with `ts_unit = ns` reproduces the stream.
pub fn write_jsonl(events: &[TraceEvent], mut w: impl Write) -> Result<(), IngestError> {
    for ev in events {
        let mut obj = serde_json::Map::new();
        obj.insert("ts".into(), serde_json::Value::from(ev.timestamp));
        obj.insert("stream".into(), serde_json::Value::from(ev.stream_id.clone()));
        obj.insert("name".into(), serde_json::Value::from(ev.name.clone()));
        if !ev.fields.is_empty() {
            let mut fobj = serde_json::Map::new();
            for (k, v) in &ev.fields {
                fobj.insert(k.clone(), field_value_to_json(v));
            }
            obj.insert("fields".into(), serde_json::Value::Object(fobj));
        }
        serde_json::to_writer(&mut w, &serde_json::Value::Object(obj))
            .map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Serialize events to the canonical CSV schema (`ts:ns` header, assignment
/// tokens in the `fields` column using the `k=v` / `k=[a,b]` forms).
pub fn write_csv(events: &[TraceEvent], mut w: impl Write) -> Result<(), IngestError> {
    writeln!(w, "ts:ns,stream,name,fields")?;
    for ev in events {
        let mut tokens = Vec::with_capacity(ev.fields.len());
        for (k, v) in &ev.fields {
            let rendered = match v {
                FieldValue::Num(x) => format!("{k}={x}"),
                FieldValue::Text(s) => format!("{k}={s}"),
                FieldValue::List(items) => {
                    let inner: Vec<String> = items
                        .iter()
                        .map(|i| match i {
                            FieldValue::Num(x) => format!("{x}"),
                            FieldValue::Text(s) => s.clone(),
                            FieldValue::List(_) => String::new(),
                        })
                        .collect();
                    format!("{k}=[{}]", inner.join(","))
                }
            };
            tokens.push(rendered);
        }
        writeln!(
            w,
            "{},{},{},{}",
            ev.timestamp,
            csv_quote(&ev.stream_id),
            csv_quote(&ev.name),
            csv_quote(&tokens.join(" "))
        )?;
    }
    Ok(())
}
