//! tracelens command line: import traces, create experiments, run analysis
//! modules, and render insight reports from a filesystem workspace.
//!
//! Workspace layout (root from `--workspace`, `$TRACELENS_WORKSPACE`, or
//! `./tracelens-workspace`):
//!   traces/        normalized event streams (canonical JSONL, ts in ns)
//!   experiments/   immutable experiment bundles
//!   reports/       per-module report JSON plus rendered documents
//!   config.json    optional stream offsets and default module parameters
//!
//! Exit codes: 0 success, 1 user error, 2 internal error.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use tracelens_core::base::{AnalysisReport, ParamValue};
use tracelens_core::ingest::{
    self, LoadOptions, StreamConfig, TimeUnit, TraceFormat,
};
use tracelens_core::modules::builtin_registry;
use tracelens_core::preprocess::{extract_metric, Aggregation, Experiment, MetricSpec};
use tracelens_core::report::{render_document, DocTarget};
use tracelens_core::synthgen::{self, ScenarioSpec};

#[derive(Parser)]
#[command(name = "tracelens", version, about = "Trace analysis toolkit")]
struct Cli {
    /// Workspace root; defaults to $TRACELENS_WORKSPACE or ./tracelens-workspace
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw trace file into the workspace
    Import {
        file: PathBuf,
        /// Input format: jsonl or csv
        #[arg(long)]
        format: String,
        /// Unit of integer timestamps (ns, us, ms, s); required unless the
        /// file declares one
        #[arg(long)]
        ts_unit: Option<String>,
        /// Trace name in the workspace; defaults to the file stem
        #[arg(long)]
        name: Option<String>,
    },
    /// Manage experiments
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
    /// Run an analysis module (or `all`) over an experiment
    Analyze {
        experiment: String,
        #[arg(long)]
        module: String,
        /// Module parameter override, `key=value`; repeatable
        #[arg(long = "param")]
        params: Vec<String>,
    },
    /// Render the insight document from existing module reports
    Report {
        experiment: String,
        /// md or json
        #[arg(long, default_value = "md")]
        format: String,
    },
    /// Inspect available analysis modules
    Modules {
        #[command(subcommand)]
        cmd: ModulesCmd,
    },
    /// Generate a synthetic trace with ground-truth labels
    Synth {
        scenario: PathBuf,
        /// Output directory; defaults to <workspace>/synth/<scenario-stem>
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Create an immutable experiment from an imported trace
    Create {
        id: String,
        /// Imported trace name
        #[arg(long)]
        trace: String,
        /// Metric spec `name=event.field:agg:dt`, e.g. `cpu0=cpu_util.value:mean:1s`;
        /// repeatable
        #[arg(long = "metric")]
        metrics: Vec<String>,
    },
}

#[derive(Subcommand)]
enum ModulesCmd {
    /// List registered modules
    List,
}

#[derive(Debug)]
enum CliError {
    User(String),
    Internal(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> CliError {
        CliError::Internal(e.to_string())
    }
}

fn user<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::User(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}

// ---------------------------------------------------------------------------
// workspace

struct Workspace {
    root: PathBuf,
    config: Config,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    /// Per-stream clock corrections applied at import.
    #[serde(default)]
    streams: BTreeMap<String, StreamOffsets>,
    /// Per-module default parameters applied before CLI overrides.
    #[serde(default)]
    default_params: BTreeMap<String, BTreeMap<String, serde_json::Value>>,
}

#[derive(Debug, Default, Deserialize)]
struct StreamOffsets {
    #[serde(default)]
    clock_offset_ns: i64,
    #[serde(default)]
    timezone_offset_minutes: i32,
}

impl Workspace {
    fn open(root_flag: Option<PathBuf>) -> Result<Workspace, CliError> {
        let root = root_flag
            .or_else(|| std::env::var_os("TRACELENS_WORKSPACE").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("tracelens-workspace"));
        for sub in ["traces", "experiments", "reports"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let config_path = root.join("config.json");
        let config = if config_path.exists() {
            let text = fs::read_to_string(&config_path)?;
            match serde_json::from_str(&text) {
                Ok(c) => c,
                Err(e) => return user(format!("bad config.json: {e}")),
            }
        } else {
            Config::default()
        };
        Ok(Workspace { root, config })
    }

    fn stream_configs(&self) -> HashMap<String, StreamConfig> {
        self.config
            .streams
            .iter()
            .map(|(id, o)| {
                let mut cfg = StreamConfig::new(id.clone());
                cfg.clock_offset_ns = o.clock_offset_ns;
                cfg.timezone_offset_minutes = o.timezone_offset_minutes;
                (id.clone(), cfg)
            })
            .collect()
    }

    /// Exclusive writer lock for mutating commands; released on drop.
    fn lock(&self) -> Result<LockGuard, CliError> {
        let path = self.root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => user(format!(
                "workspace is locked by another process (remove {} if stale)",
                path.display()
            )),
            Err(e) => Err(e.into()),
        }
    }
}

struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Write a file atomically: temp file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dispatch

fn run(cli: Cli) -> Result<(), CliError> {
    let ws = Workspace::open(cli.workspace)?;
    match cli.command {
        Command::Import {
            file,
            format,
            ts_unit,
            name,
        } => cmd_import(&ws, &file, &format, ts_unit.as_deref(), name),
        Command::Experiment {
            cmd: ExperimentCmd::Create { id, trace, metrics },
        } => cmd_experiment_create(&ws, &id, &trace, &metrics),
        Command::Analyze {
            experiment,
            module,
            params,
        } => cmd_analyze(&ws, &experiment, &module, &params),
        Command::Report { experiment, format } => cmd_report(&ws, &experiment, &format),
        Command::Modules { cmd: ModulesCmd::List } => cmd_modules_list(),
        Command::Synth { scenario, out } => cmd_synth(&ws, &scenario, out),
    }
}

fn cmd_import(
    ws: &Workspace,
    file: &Path,
    format: &str,
    ts_unit: Option<&str>,
    name: Option<String>,
) -> Result<(), CliError> {
    let format = match format {
        "jsonl" => TraceFormat::Jsonl,
        "csv" => TraceFormat::Csv,
        other => return user(format!("unknown format `{other}` (expected jsonl or csv)")),
    };
    let mut opts = LoadOptions::new(format);
    if let Some(u) = ts_unit {
        match TimeUnit::from_suffix(u) {
            Some(unit) => opts = opts.with_unit(unit),
            None => return user(format!("unknown ts unit `{u}` (expected ns, us, ms, s)")),
        }
    }
    if !file.exists() {
        return user(format!("no such file: {}", file.display()));
    }
    let name = name.unwrap_or_else(|| {
        file.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".to_string())
    });

    let (events, quality) = ingest::load_trace(file, &opts, &ws.stream_configs())
        .map_err(|e| CliError::User(format!("import failed: {e}")))?;

    let _lock = ws.lock()?;
    let mut out = Vec::new();
    ingest::write_jsonl(&events, &mut out)?;
    write_atomic(&ws.root.join("traces").join(format!("{name}.jsonl")), &out)?;
    write_atomic(
        &ws.root.join("traces").join(format!("{name}.quality.json")),
        serde_json::to_string_pretty(&quality)
            .map_err(|e| CliError::Internal(e.to_string()))?
            .as_bytes(),
    )?;
    println!(
        "imported {} events into trace `{name}` ({} dropped)",
        quality.events, quality.dropped
    );
    Ok(())
}

/// Metric spec grammar: `name=event.field:agg:dt` with dt like `1s`,
/// `500ms`, `250us`, or `10ns`. `agg` is one of last/sum/count/mean/max.
fn parse_metric_spec(raw: &str) -> Result<MetricSpec, CliError> {
    let bad = || CliError::User(format!("bad metric spec `{raw}`: expected name=event.field:agg:dt"));
    let (name, rest) = raw.split_once('=').ok_or_else(bad)?;
    let mut parts = rest.split(':');
    let source = parts.next().ok_or_else(bad)?;
    let agg = parts.next().ok_or_else(bad)?;
    let dt = parts.next().ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    let (event, field) = source.split_once('.').ok_or_else(bad)?;
    let aggregation: Aggregation = agg
        .parse()
        .map_err(|_| CliError::User(format!("unknown aggregation `{agg}`")))?;
    Ok(MetricSpec {
        name: name.to_string(),
        unit: String::new(),
        event_name: event.to_string(),
        field_key: field.to_string(),
        aggregation,
        dt: parse_duration_ns(dt)?,
    })
}

fn parse_duration_ns(raw: &str) -> Result<i64, CliError> {
    for (suffix, scale) in [("ns", 1i64), ("us", 1_000), ("ms", 1_000_000), ("s", 1_000_000_000)] {
        if let Some(num) = raw.strip_suffix(suffix) {
            // "ms"/"ns"/"us" all end in 's'; make sure we matched the longest
            if suffix == "s" && (raw.ends_with("ns") || raw.ends_with("us") || raw.ends_with("ms")) {
                continue;
            }
            let v: i64 = num
                .parse()
                .map_err(|_| CliError::User(format!("bad duration `{raw}`")))?;
            if v <= 0 {
                return user(format!("duration must be positive: `{raw}`"));
            }
            return Ok(v * scale);
        }
    }
    user(format!("bad duration `{raw}` (expected e.g. 1s, 500ms)"))
}

fn cmd_experiment_create(
    ws: &Workspace,
    id: &str,
    trace: &str,
    metric_specs: &[String],
) -> Result<(), CliError> {
    if metric_specs.is_empty() {
        return user("at least one --metric is required");
    }
    let exp_dir = ws.root.join("experiments").join(id);
    if exp_dir.exists() {
        return user(format!("experiment `{id}` already exists (experiments are immutable)"));
    }
    let trace_path = ws.root.join("traces").join(format!("{trace}.jsonl"));
    if !trace_path.exists() {
        return user(format!("no imported trace named `{trace}`"));
    }
    let opts = LoadOptions::new(TraceFormat::Jsonl).with_unit(TimeUnit::Ns);
    let (events, _) = ingest::load_trace(&trace_path, &opts, &HashMap::new())
        .map_err(|e| CliError::Internal(format!("stored trace unreadable: {e}")))?;

    let mut series = Vec::new();
    for raw in metric_specs {
        let spec = parse_metric_spec(raw)?;
        let s = extract_metric(&events, &spec)
            .map_err(|e| CliError::User(format!("metric `{}`: {e}", spec.name)))?;
        series.push(s);
    }
    // derived from trace content, not wall clock, so reruns are reproducible
    let created_at_ns = events.iter().map(|e| e.timestamp).max().unwrap_or(0);
    let experiment = Experiment::from_unaligned(id, series, events, created_at_ns)
        .map_err(|e| CliError::User(format!("cannot align metrics: {e}")))?;

    let _lock = ws.lock()?;
    experiment.save(&exp_dir)?;
    println!(
        "created experiment `{id}`: {} metrics, {} samples",
        experiment.series().len(),
        experiment.len()
    );
    Ok(())
}

/// Parse `--param key=value` strings against the module's schema.
fn parse_params(
    schema: &[tracelens_core::base::ParamSpec],
    defaults: Option<&BTreeMap<String, serde_json::Value>>,
    raw_params: &[String],
) -> Result<BTreeMap<String, ParamValue>, CliError> {
    let mut out = BTreeMap::new();
    if let Some(defaults) = defaults {
        for (k, v) in defaults {
            let value: ParamValue = serde_json::from_value(v.clone())
                .map_err(|e| CliError::User(format!("bad default for `{k}` in config.json: {e}")))?;
            out.insert(k.clone(), value);
        }
    }
    for raw in raw_params {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| CliError::User(format!("bad --param `{raw}`: expected key=value")))?;
        let spec = schema
            .iter()
            .find(|s| s.key == k)
            .ok_or_else(|| CliError::User(format!("unknown parameter `{k}`")))?;
        let value = ParamValue::parse_as(spec.ptype, v)
            .map_err(|e| CliError::User(format!("bad value for `{k}`: {e}")))?;
        out.insert(k.to_string(), value);
    }
    Ok(out)
}

fn cmd_analyze(
    ws: &Workspace,
    experiment_id: &str,
    module: &str,
    raw_params: &[String],
) -> Result<(), CliError> {
    let exp_dir = ws.root.join("experiments").join(experiment_id);
    if !exp_dir.exists() {
        return user(format!("no experiment named `{experiment_id}`"));
    }
    let experiment = Experiment::load(&exp_dir)
        .map_err(|e| CliError::Internal(format!("stored experiment unreadable: {e}")))?;
    let registry = builtin_registry();

    let modules: Vec<String> = if module == "all" {
        registry.list_modules().iter().map(|d| d.name.clone()).collect()
    } else if registry.contains(module) {
        vec![module.to_string()]
    } else {
        return user(format!("unknown module `{module}`"));
    };
    if module == "all" && !raw_params.is_empty() {
        return user("--param is only valid with a single --module");
    }

    let _lock = ws.lock()?;
    for name in modules {
        let descriptor = registry
            .list_modules()
            .into_iter()
            .find(|d| d.name == name)
            .expect("registered module has a descriptor");
        let params = parse_params(
            &descriptor.parameter_schema,
            ws.config.default_params.get(&name),
            raw_params,
        )?;
        let report = registry
            .run(&name, &experiment, &params)
            .map_err(|e| CliError::User(e.to_string()))?;
        let path = ws
            .root
            .join("reports")
            .join(format!("{experiment_id}.{name}.json"));
        write_atomic(&path, report.to_json().as_bytes())?;
        println!("{name}: confidence {:.2} -> {}", report.confidence, path.display());
    }
    Ok(())
}

fn cmd_report(ws: &Workspace, experiment_id: &str, format: &str) -> Result<(), CliError> {
    let target = match format {
        "md" => DocTarget::Markdown,
        "json" => DocTarget::Json,
        other => return user(format!("unknown report format `{other}` (expected md or json)")),
    };
    let exp_dir = ws.root.join("experiments").join(experiment_id);
    if !exp_dir.exists() {
        return user(format!("no experiment named `{experiment_id}`"));
    }
    let experiment = Experiment::load(&exp_dir)
        .map_err(|e| CliError::Internal(format!("stored experiment unreadable: {e}")))?;

    let mut reports: Vec<AnalysisReport> = Vec::new();
    let registry = builtin_registry();
    for d in registry.list_modules() {
        let path = ws
            .root
            .join("reports")
            .join(format!("{experiment_id}.{}.json", d.name));
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let report: AnalysisReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Internal(format!("corrupt report {}: {e}", path.display())))?;
            reports.push(report);
        }
    }
    if reports.is_empty() {
        return user(format!(
            "no module reports for `{experiment_id}`; run `tracelens analyze {experiment_id} --module all` first"
        ));
    }
    let refs: Vec<&AnalysisReport> = reports.iter().collect();
    let bytes = render_document(
        experiment_id,
        experiment.created_at_ns(),
        &refs,
        &[],
        target,
    )
    .map_err(|e| CliError::Internal(e.to_string()))?;

    let _lock = ws.lock()?;
    let out_path = ws
        .root
        .join("reports")
        .join(format!("{experiment_id}.report.{format}"));
    write_atomic(&out_path, &bytes)?;
    println!("{}", out_path.display());
    Ok(())
}

fn cmd_modules_list() -> Result<(), CliError> {
    for d in builtin_registry().list_modules() {
        println!("{} {} ({} params)", d.name, d.version, d.parameter_schema.len());
    }
    Ok(())
}

fn cmd_synth(ws: &Workspace, scenario: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    if !scenario.exists() {
        return user(format!("no such file: {}", scenario.display()));
    }
    let text = fs::read_to_string(scenario)?;
    let spec: ScenarioSpec = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => return user(format!("bad scenario file: {e}")),
    };
    let out_dir = out.unwrap_or_else(|| {
        let stem = scenario
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".to_string());
        ws.root.join("synth").join(stem)
    });
    let truth = match synthgen::generate_to_files(&spec, &out_dir) {
        Ok(t) => t,
        Err(tracelens_core::synthgen::SynthError::InvalidSpec(msg)) => {
            return user(format!("invalid scenario: {msg}"))
        }
        Err(e) => return Err(CliError::Internal(e.to_string())),
    };
    println!(
        "wrote {} and ground truth ({} changepoints, {} leaks) to {}",
        out_dir.join("trace.jsonl").display(),
        truth.changepoints.len(),
        truth.leaks.unmatched_count,
        out_dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_grammar() {
        assert_eq!(parse_duration_ns("1s").unwrap(), 1_000_000_000);
        assert_eq!(parse_duration_ns("500ms").unwrap(), 500_000_000);
        assert_eq!(parse_duration_ns("250us").unwrap(), 250_000);
        assert_eq!(parse_duration_ns("10ns").unwrap(), 10);
        assert!(parse_duration_ns("10").is_err());
        assert!(parse_duration_ns("-1s").is_err());
        assert!(parse_duration_ns("abcms").is_err());
    }

    #[test]
    fn metric_spec_grammar() {
        let spec = parse_metric_spec("cpu0=cpu_util.value:mean:1s").unwrap();
        assert_eq!(spec.name, "cpu0");
        assert_eq!(spec.event_name, "cpu_util");
        assert_eq!(spec.field_key, "value");
        assert_eq!(spec.dt, 1_000_000_000);
        assert!(parse_metric_spec("cpu0=cpu_util:mean:1s").is_err());
        assert!(parse_metric_spec("cpu0=cpu_util.value:bogus:1s").is_err());
        assert!(parse_metric_spec("cpu0").is_err());
    }
}
