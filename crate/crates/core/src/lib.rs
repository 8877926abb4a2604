//! Trace analysis toolkit: ingest heterogeneous trace event streams, turn them
//! into aligned metric series, and run a set of expert-knowledge analysis
//! modules (anomaly detection, memory-leak detection, correlation,
//! change-point detection, capacity planning, idle-resource identification)
//! that emit interpretable insight documents and plot exports.

pub mod anomaly;
pub mod base;
pub mod capacity;
pub mod changepoint;
pub mod correlation;
pub mod idle;
pub mod ingest;
pub mod memleak;
pub mod modules;
pub mod preprocess;
pub mod report;
pub mod stats;
pub mod synthgen;

pub use base::{AnalysisReport, ModuleDescriptor, Registry, ReportKind};
pub use ingest::{FieldValue, QualityReport, StreamConfig, TraceEvent};
pub use preprocess::{Experiment, MetricSeries};
