//! Pointer-lifetime tracking over allocation events: matches alloc/free
//! pairs, flags unmatched allocations with call-site attribution, and tests
//! a memory series for a growth trend before calling something a leak.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::TraceEvent;
use crate::preprocess::MetricSeries;
use crate::stats;

#[derive(Debug, Error)]
pub enum MemleakError {
    #[error("event at ts {ts} missing field `{field}`")]
    MissingField { ts: i64, field: String },
    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub ptr: String,
    pub size: u64,
    pub alloc_ts: i64,
    pub free_ts: Option<i64>,
    pub callsite: String,
    pub freed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocAnomalyKind {
    DoubleFree,
    FreeWithoutAlloc,
    PointerReuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocAnomaly {
    pub kind: AllocAnomalyKind,
    pub ptr: String,
    pub timestamp: i64,
}

/// Outcome of the lifetime fold: closed records, still-open (unmatched)
/// records, records superseded by a pointer reuse, and event anomalies.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LifetimeOutcome {
    pub closed: Vec<AllocationRecord>,
    pub unmatched: Vec<AllocationRecord>,
    /// Open records shadowed by a later alloc on the same pointer; counted
    /// separately from unmatched so alloc counts stay conserved.
    pub superseded: Vec<AllocationRecord>,
    pub anomalies: Vec<AllocAnomaly>,
    pub alloc_count: u64,
    pub free_count: u64,
}

/// Sequential fold over the event stream. Alloc events must carry `ptr`,
/// `size`, `callsite`; free events carry `ptr`. A free closes the open
/// record for its pointer; a free on an unknown pointer is recorded as
/// free-without-alloc (or double-free if that pointer was already closed);
/// an alloc on an already-open pointer records a reuse anomaly, shelves the
/// old record, and opens a fresh one.
pub fn track_lifetimes(
    events: &[TraceEvent],
    alloc_event_name: &str,
    free_event_name: &str,
) -> Result<LifetimeOutcome, MemleakError> {
    let mut out = LifetimeOutcome::default();
    let mut open: HashMap<String, AllocationRecord> = HashMap::new();
    let mut ever_closed: HashMap<String, bool> = HashMap::new();

    for ev in events {
        if ev.name == alloc_event_name {
            let ptr = field_text(ev, "ptr")?;
            let size = ev
                .fields
                .get("size")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| MemleakError::MissingField {
                    ts: ev.timestamp,
                    field: "size".into(),
                })? as u64;
            let callsite = field_text(ev, "callsite")?;
            out.alloc_count += 1;
            if let Some(old) = open.remove(&ptr) {
                out.anomalies.push(AllocAnomaly {
                    kind: AllocAnomalyKind::PointerReuse,
                    ptr: ptr.clone(),
                    timestamp: ev.timestamp,
                });
                out.superseded.push(old);
            }
            open.insert(
                ptr.clone(),
                AllocationRecord {
                    ptr,
                    size,
                    alloc_ts: ev.timestamp,
                    free_ts: None,
                    callsite,
                    freed: false,
                },
            );
        } else if ev.name == free_event_name {
            let ptr = field_text(ev, "ptr")?;
            out.free_count += 1;
            match open.remove(&ptr) {
                Some(mut rec) => {
                    rec.free_ts = Some(ev.timestamp);
                    rec.freed = true;
                    ever_closed.insert(ptr, true);
                    out.closed.push(rec);
                }
                None => {
                    let kind = if ever_closed.contains_key(&ptr) {
                        AllocAnomalyKind::DoubleFree
                    } else {
                        AllocAnomalyKind::FreeWithoutAlloc
                    };
                    out.anomalies.push(AllocAnomaly {
                        kind,
                        ptr,
                        timestamp: ev.timestamp,
                    });
                }
            }
        }
    }

    let mut unmatched: Vec<AllocationRecord> = open.into_values().collect();
    unmatched.sort_by(|a, b| (a.alloc_ts, &a.ptr).cmp(&(b.alloc_ts, &b.ptr)));
    out.unmatched = unmatched;
    Ok(out)
}

fn field_text(ev: &TraceEvent, key: &str) -> Result<String, MemleakError> {
    ev.fields
        .get(key)
        .map(|v| v.to_text())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| MemleakError::MissingField {
            ts: ev.timestamp,
            field: key.into(),
        })
}

/// Least-squares memory growth over real time: slope in bytes/s and r².
pub fn growth_trend(memory_series: &MetricSeries) -> Result<(f64, f64), MemleakError> {
    if memory_series.len() < 10 {
        return Err(MemleakError::TooShort {
            needed: 10,
            got: memory_series.len(),
        });
    }
    let ts: Vec<f64> = (0..memory_series.len())
        .map(|i| memory_series.timestamp_at(i) as f64 / 1e9)
        .collect();
    let (slope, _, r2) = stats::ols_fit(&ts, &memory_series.values);
    Ok((slope, r2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakVerdict {
    LeakSuspected,
    NoLeak,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeakReport {
    pub unmatched: Vec<AllocationRecord>,
    /// Callsite -> total leaked bytes, ordered by bytes descending.
    pub leaked_bytes_by_callsite: Vec<(String, u64)>,
    pub total_leaked_bytes: u64,
    pub growth_slope_bytes_per_s: Option<f64>,
    pub growth_r2: Option<f64>,
    pub verdict: LeakVerdict,
    pub anomalies: Vec<AllocAnomaly>,
}

#[derive(Debug, Clone)]
pub struct LeakParams {
    pub min_leaked_bytes: u64,
    pub slope_threshold_bytes_per_s: f64,
    pub r2_threshold: f64,
}

impl Default for LeakParams {
    fn default() -> Self {
        LeakParams {
            min_leaked_bytes: 0,
            slope_threshold_bytes_per_s: 0.0,
            r2_threshold: 0.8,
        }
    }
}

/// Aggregate unmatched allocations by call site and form a verdict.
/// With a memory series present, a leak needs both unmatched bytes and
/// growth evidence (slope and r² above thresholds); without one, unmatched
/// bytes alone suffice.
pub fn build_leak_report(
    outcome: &LifetimeOutcome,
    memory_series: Option<&MetricSeries>,
    params: &LeakParams,
) -> Result<LeakReport, MemleakError> {
    let mut by_site: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for rec in &outcome.unmatched {
        *by_site.entry(rec.callsite.clone()).or_insert(0) += rec.size;
        total += rec.size;
    }
    let mut ranked: Vec<(String, u64)> = by_site.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let trend = match memory_series {
        Some(s) => Some(growth_trend(s)?),
        None => None,
    };

    let leaked = total > params.min_leaked_bytes;
    let verdict = match (leaked, trend) {
        (false, _) => LeakVerdict::NoLeak,
        (true, None) => LeakVerdict::LeakSuspected,
        (true, Some((slope, r2))) => {
            if slope > params.slope_threshold_bytes_per_s && r2 > params.r2_threshold {
                LeakVerdict::LeakSuspected
            } else {
                LeakVerdict::Inconclusive
            }
        }
    };

    Ok(LeakReport {
        unmatched: outcome.unmatched.clone(),
        leaked_bytes_by_callsite: ranked,
        total_leaked_bytes: total,
        growth_slope_bytes_per_s: trend.map(|t| t.0),
        growth_r2: trend.map(|t| t.1),
        verdict,
        anomalies: outcome.anomalies.clone(),
    })
}
