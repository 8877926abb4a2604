//! The shared module contract: every analysis module declares a descriptor
//! (name, version, parameter schema, produced report kind) and runs through
//! one uniform API against an immutable [`Experiment`], returning an
//! [`AnalysisReport`]. A [`Registry`] holds built-ins and user modules
//! side by side.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::Experiment;

/// Version tag written into every serialized report envelope.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BaseError {
    #[error("module `{0}` already registered")]
    DuplicateModule(String),
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },
    #[error("module `{module}` failed: {reason}")]
    ModuleFailed { module: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Anomaly,
    Leak,
    Correlation,
    Changepoint,
    Capacity,
    Idle,
    Custom,
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReportKind::Anomaly => "anomaly",
            ReportKind::Leak => "leak",
            ReportKind::Correlation => "correlation",
            ReportKind::Changepoint => "changepoint",
            ReportKind::Capacity => "capacity",
            ReportKind::Idle => "idle",
            ReportKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Int,
    Float,
    String,
    Enum,
    List,
}

/// A parameter value. `List` holds strings; modules parse elements as
/// needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<String>),
}

impl ParamValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[String]> {
        match self {
            ParamValue::List(v) => Some(v),
            _ => None,
        }
    }

    /// Parse a CLI-style string into a value of the given type.
    pub fn parse_as(ptype: ParamType, raw: &str) -> Result<ParamValue, String> {
        match ptype {
            ParamType::Int => raw
                .parse::<i64>()
                .map(ParamValue::Int)
                .map_err(|e| e.to_string()),
            ParamType::Float => raw
                .parse::<f64>()
                .map(ParamValue::Float)
                .map_err(|e| e.to_string()),
            ParamType::String | ParamType::Enum => Ok(ParamValue::Str(raw.to_string())),
            ParamType::List => Ok(ParamValue::List(
                raw.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
            )),
        }
    }
}

/// Schema entry for one module parameter; every parameter carries a default
/// so modules are runnable with zero configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub key: String,
    #[serde(rename = "type")]
    pub ptype: ParamType,
    pub default: ParamValue,
    pub description: String,
    /// Allowed values when `ptype` is `Enum`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
}

impl ParamSpec {
    pub fn int(key: &str, default: i64, description: &str) -> ParamSpec {
        ParamSpec {
            key: key.into(),
            ptype: ParamType::Int,
            default: ParamValue::Int(default),
            description: description.into(),
            choices: Vec::new(),
        }
    }

    pub fn float(key: &str, default: f64, description: &str) -> ParamSpec {
        ParamSpec {
            key: key.into(),
            ptype: ParamType::Float,
            default: ParamValue::Float(default),
            description: description.into(),
            choices: Vec::new(),
        }
    }

    pub fn string(key: &str, default: &str, description: &str) -> ParamSpec {
        ParamSpec {
            key: key.into(),
            ptype: ParamType::String,
            default: ParamValue::Str(default.into()),
            description: description.into(),
            choices: Vec::new(),
        }
    }

    pub fn enumerated(key: &str, default: &str, choices: &[&str], description: &str) -> ParamSpec {
        ParamSpec {
            key: key.into(),
            ptype: ParamType::Enum,
            default: ParamValue::Str(default.into()),
            description: description.into(),
            choices: choices.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn list(key: &str, default: &[&str], description: &str) -> ParamSpec {
        ParamSpec {
            key: key.into(),
            ptype: ParamType::List,
            default: ParamValue::List(default.iter().map(|s| s.to_string()).collect()),
            description: description.into(),
            choices: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleDescriptor {
    pub name: String,
    pub version: String,
    pub parameter_schema: Vec<ParamSpec>,
    pub produces: ReportKind,
}

/// Fully resolved parameter map handed to a module's run function: every
/// schema key present, every value type-checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams(pub BTreeMap<String, ParamValue>);

impl ResolvedParams {
    pub fn get_i64(&self, key: &str) -> i64 {
        self.0.get(key).and_then(|v| v.as_i64()).unwrap_or(0)
    }

    pub fn get_f64(&self, key: &str) -> f64 {
        self.0.get(key).and_then(|v| v.as_f64()).unwrap_or(0.0)
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.0.get(key).and_then(|v| v.as_str()).unwrap_or("")
    }

    pub fn get_list(&self, key: &str) -> &[String] {
        self.0.get(key).and_then(|v| v.as_list()).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleId {
    pub name: String,
    pub version: String,
}

/// What a module's run function produces; the registry wraps it into the
/// full report envelope.
#[derive(Debug, Clone)]
pub struct ModuleOutput {
    /// Kind-specific findings payload, already serialized. Modules use
    /// ordered maps so the payload is byte-stable across runs.
    pub findings: serde_json::Value,
    /// Module-defined confidence in [0, 1]; each module documents its rule.
    pub confidence: f64,
    /// Structured finding sentences feeding the document renderer.
    pub narrative_seed: Vec<String>,
}

/// Versioned result envelope produced by every module run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub kind: ReportKind,
    pub module: ModuleId,
    pub params_used: BTreeMap<String, ParamValue>,
    pub confidence: f64,
    pub findings: serde_json::Value,
    pub narrative_seed: Vec<String>,
    /// Wall-clock runtime; excluded from the serialized envelope so report
    /// files are byte-identical across reruns.
    #[serde(skip)]
    pub runtime_ms: u64,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// An analysis module: a descriptor plus a pure run function over an
/// immutable experiment and resolved parameters.
pub trait AnalysisModule: Send + Sync {
    fn descriptor(&self) -> ModuleDescriptor;
    fn run(&self, experiment: &Experiment, params: &ResolvedParams)
        -> Result<ModuleOutput, String>;
}

/// Adapter so a closure can be registered as a module.
pub struct FnModule<F> {
    descriptor: ModuleDescriptor,
    run_fn: F,
}

impl<F> FnModule<F>
where
    F: Fn(&Experiment, &ResolvedParams) -> Result<ModuleOutput, String> + Send + Sync,
{
    pub fn new(descriptor: ModuleDescriptor, run_fn: F) -> Self {
        FnModule { descriptor, run_fn }
    }
}

impl<F> AnalysisModule for FnModule<F>
where
    F: Fn(&Experiment, &ResolvedParams) -> Result<ModuleOutput, String> + Send + Sync,
{
    fn descriptor(&self) -> ModuleDescriptor {
        self.descriptor.clone()
    }

    fn run(
        &self,
        experiment: &Experiment,
        params: &ResolvedParams,
    ) -> Result<ModuleOutput, String> {
        (self.run_fn)(experiment, params)
    }
}

/// Read-mostly registry of analysis modules; build it once, then run
/// modules concurrently against shared experiments.
#[derive(Default)]
pub struct Registry {
    modules: BTreeMap<String, Box<dyn AnalysisModule>>,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    pub fn register(&mut self, module: Box<dyn AnalysisModule>) -> Result<(), BaseError> {
        let name = module.descriptor().name;
        if self.modules.contains_key(&name) {
            return Err(BaseError::DuplicateModule(name));
        }
        self.modules.insert(name, module);
        Ok(())
    }

    /// Descriptors sorted by module name.
    pub fn list_modules(&self) -> Vec<ModuleDescriptor> {
        self.modules.values().map(|m| m.descriptor()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.modules.contains_key(name)
    }

    /// Validate parameters against the schema (unknown keys rejected,
    /// missing keys defaulted, strict type checks) and run the module.
    pub fn run(
        &self,
        module_name: &str,
        experiment: &Experiment,
        params: &BTreeMap<String, ParamValue>,
    ) -> Result<AnalysisReport, BaseError> {
        let module = self
            .modules
            .get(module_name)
            .ok_or_else(|| BaseError::UnknownModule(module_name.to_string()))?;
        let descriptor = module.descriptor();
        let resolved = resolve_params(&descriptor.parameter_schema, params)?;

        let start = Instant::now();
        let output =
            module
                .run(experiment, &resolved)
                .map_err(|reason| BaseError::ModuleFailed {
                    module: module_name.to_string(),
                    reason,
                })?;
        let runtime_ms = start.elapsed().as_millis() as u64;

        Ok(AnalysisReport {
            schema_version: REPORT_SCHEMA_VERSION,
            kind: descriptor.produces,
            module: ModuleId {
                name: descriptor.name,
                version: descriptor.version,
            },
            params_used: resolved.0,
            confidence: output.confidence.clamp(0.0, 1.0),
            findings: output.findings,
            narrative_seed: output.narrative_seed,
            runtime_ms,
        })
    }
}

fn resolve_params(
    schema: &[ParamSpec],
    given: &BTreeMap<String, ParamValue>,
) -> Result<ResolvedParams, BaseError> {
    for key in given.keys() {
        if !schema.iter().any(|s| &s.key == key) {
            return Err(BaseError::InvalidParameter {
                key: key.clone(),
                reason: "unknown parameter".into(),
            });
        }
    }
    let mut resolved = BTreeMap::new();
    for spec in schema {
        let value = match given.get(&spec.key) {
            None => spec.default.clone(),
            Some(v) => check_type(spec, v)?,
        };
        resolved.insert(spec.key.clone(), value);
    }
    Ok(ResolvedParams(resolved))
}

fn check_type(spec: &ParamSpec, value: &ParamValue) -> Result<ParamValue, BaseError> {
    let err = |reason: String| BaseError::InvalidParameter {
        key: spec.key.clone(),
        reason,
    };
    match spec.ptype {
        ParamType::Int => match value {
            ParamValue::Int(_) => Ok(value.clone()),
            other => Err(err(format!("expected int, got {other:?}"))),
        },
        ParamType::Float => match value {
            ParamValue::Float(_) => Ok(value.clone()),
            // ints widen to float
            ParamValue::Int(v) => Ok(ParamValue::Float(*v as f64)),
            other => Err(err(format!("expected float, got {other:?}"))),
        },
        ParamType::String => match value {
            ParamValue::Str(_) => Ok(value.clone()),
            other => Err(err(format!("expected string, got {other:?}"))),
        },
        ParamType::Enum => match value {
            ParamValue::Str(s) if spec.choices.iter().any(|c| c == s) => Ok(value.clone()),
            ParamValue::Str(s) => Err(err(format!(
                "`{s}` not one of {:?}",
                spec.choices
            ))),
            other => Err(err(format!("expected one of {:?}, got {other:?}", spec.choices))),
        },
        ParamType::List => match value {
            ParamValue::List(_) => Ok(value.clone()),
            other => Err(err(format!("expected list, got {other:?}"))),
        },
    }
}
