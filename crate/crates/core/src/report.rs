//! Interpretation layer: renders analysis reports into an insight document
//! (markdown or JSON) and emits deterministic plot exports (XY, heatmap,
//! box plot) as SVG, CSV, or JSON.
//!
//! Export layouts:
//! - xy CSV: long format `series,x,y`, one row per point.
//! - heatmap CSV: `(n+1) x (n+1)` grid; header row/column carry labels,
//!   the top-left cell is empty.
//! - box CSV: `series,min,q1,median,q3,max`.
//! - SVG: fixed 640x480 canvas, self-contained, no external references.
//!
//! All numeric values displayed in markdown use the same 4-significant-digit
//! rounding rule as the JSON document metadata.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base::{AnalysisReport, ReportKind};
use crate::stats;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report kind: {0}")]
    UnknownReportKind(String),
    #[error("plot kind {kind} incompatible with input: {reason}")]
    IncompatibleKind { kind: String, reason: String },
    #[error("unsupported export format: {0}")]
    UnsupportedFormat(String),
    #[error("no reports to render")]
    NoReports,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocTarget {
    Markdown,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub module: String,
    pub headline: String,
    pub findings: Vec<String>,
    pub confidence: f64,
    pub confidence_display: String,
    pub recommended_actions: Vec<String>,
    pub plot_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightDocument {
    pub experiment_id: String,
    pub generated_at_ns: i64,
    pub sections: Vec<Section>,
}

fn headline_for(kind: ReportKind, n_findings: usize) -> Result<String, ReportError> {
    let (none_text, some_noun) = match kind {
        ReportKind::Anomaly => ("no anomalies detected", "anomaly finding"),
        ReportKind::Leak => ("no leaks detected", "leak finding"),
        ReportKind::Correlation => ("no significant correlations", "significant correlation"),
        ReportKind::Changepoint => ("no change points detected", "change point"),
        ReportKind::Capacity => ("no capacity risks projected", "capacity finding"),
        ReportKind::Idle => ("no idle resources identified", "idle finding"),
        ReportKind::Custom => {
            return Err(ReportError::UnknownReportKind("custom".to_string()))
        }
    };
    Ok(if n_findings == 0 {
        none_text.to_string()
    } else if n_findings == 1 {
        format!("1 {some_noun}")
    } else {
        format!("{n_findings} {some_noun}s")
    })
}

/// Pull structured recommendation texts out of a findings payload: any
/// top-level `recommendations` array whose elements carry a `text` field.
fn extract_actions(findings: &serde_json::Value) -> Vec<String> {
    findings
        .get("recommendations")
        .and_then(|r| r.as_array())
        .map(|arr| {
            arr.iter()
                .filter_map(|v| v.get("text").and_then(|t| t.as_str()))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

/// Assemble the document model: one section per report, sorted by module
/// name, findings rendered from each report's narrative seeds.
pub fn build_document(
    experiment_id: &str,
    generated_at_ns: i64,
    reports: &[&AnalysisReport],
    plot_refs: &[(String, Vec<String>)],
) -> Result<InsightDocument, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::NoReports);
    }
    let mut sorted: Vec<&AnalysisReport> = reports.to_vec();
    sorted.sort_by(|a, b| a.module.name.cmp(&b.module.name));
    let mut sections = Vec::with_capacity(sorted.len());
    for r in sorted {
        let refs = plot_refs
            .iter()
            .find(|(m, _)| *m == r.module.name)
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        sections.push(Section {
            module: r.module.name.clone(),
            headline: headline_for(r.kind, r.narrative_seed.len())?,
            findings: r.narrative_seed.clone(),
            confidence: r.confidence,
            confidence_display: stats::fmt_sig4(r.confidence),
            recommended_actions: extract_actions(&r.findings),
            plot_refs: refs,
        });
    }
    Ok(InsightDocument {
        experiment_id: experiment_id.to_string(),
        generated_at_ns,
        sections,
    })
}

/// Render the document for a target. Markdown shows each section's headline,
/// findings, confidence, and actions; JSON is the document model plus the
/// report envelopes verbatim.
pub fn render_document(
    experiment_id: &str,
    generated_at_ns: i64,
    reports: &[&AnalysisReport],
    plot_refs: &[(String, Vec<String>)],
    target: DocTarget,
) -> Result<Vec<u8>, ReportError> {
    let doc = build_document(experiment_id, generated_at_ns, reports, plot_refs)?;
    match target {
        DocTarget::Markdown => Ok(render_markdown(&doc).into_bytes()),
        DocTarget::Json => {
            let mut sorted: Vec<&AnalysisReport> = reports.to_vec();
            sorted.sort_by(|a, b| a.module.name.cmp(&b.module.name));
            let payload = serde_json::json!({
                "document": doc,
                "reports": sorted,
            });
            Ok(serde_json::to_vec_pretty(&payload).expect("document serialization"))
        }
    }
}

pub fn render_markdown(doc: &InsightDocument) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Insight report: {}\n\n", doc.experiment_id));
    out.push_str(&format!("Generated at (trace clock): {} ns\n", doc.generated_at_ns));
    for s in &doc.sections {
        out.push_str(&format!("\n## {}\n\n", s.module));
        out.push_str(&format!("**{}** (confidence {})\n", s.headline, s.confidence_display));
        if !s.findings.is_empty() {
            out.push('\n');
            for f in &s.findings {
                out.push_str(&format!("- {f}\n"));
            }
        }
        if !s.recommended_actions.is_empty() {
            out.push_str("\nRecommended actions:\n\n");
            for a in &s.recommended_actions {
                out.push_str(&format!("- {a}\n"));
            }
        }
        if !s.plot_refs.is_empty() {
            out.push('\n');
            for p in &s.plot_refs {
                out.push_str(&format!("![{}]({})\n", s.module, p));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Plots

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XySeries {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Annotation {
    /// Point marker (anomalies).
    Marker { x: f64, y: f64, label: String },
    /// Vertical line (change points).
    VLine { x: f64, label: String },
    /// Horizontal line (thresholds).
    HLine { y: f64, label: String },
    /// Shaded band (forecast uncertainty).
    Band { x: Vec<f64>, low: Vec<f64>, high: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub name: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlotSpec {
    Xy {
        title: String,
        series: Vec<XySeries>,
        annotations: Vec<Annotation>,
    },
    Heatmap {
        title: String,
        labels: Vec<String>,
        matrix: Vec<Vec<f64>>,
    },
    Box {
        title: String,
        boxes: Vec<BoxSummary>,
    },
}

pub fn xy_plot(title: &str, series: Vec<XySeries>, annotations: Vec<Annotation>) -> Result<PlotSpec, ReportError> {
    for s in &series {
        if s.x.len() != s.y.len() {
            return Err(ReportError::IncompatibleKind {
                kind: "xy".into(),
                reason: format!("series {} has mismatched x/y lengths", s.name),
            });
        }
    }
    Ok(PlotSpec::Xy {
        title: title.to_string(),
        series,
        annotations,
    })
}

pub fn heatmap_plot(title: &str, labels: Vec<String>, matrix: Vec<Vec<f64>>) -> Result<PlotSpec, ReportError> {
    let n = labels.len();
    if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
        return Err(ReportError::IncompatibleKind {
            kind: "heatmap".into(),
            reason: "matrix must be square and match label count".into(),
        });
    }
    Ok(PlotSpec::Heatmap {
        title: title.to_string(),
        labels,
        matrix,
    })
}

/// Box plot from raw series; five-number summaries use type-7 quantiles.
pub fn box_plot(title: &str, series: &[(String, Vec<f64>)]) -> Result<PlotSpec, ReportError> {
    if series.is_empty() || series.iter().any(|(_, v)| v.is_empty()) {
        return Err(ReportError::IncompatibleKind {
            kind: "box".into(),
            reason: "box plot requires at least one non-empty series".into(),
        });
    }
    let boxes = series
        .iter()
        .map(|(name, values)| {
            let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            BoxSummary {
                name: name.clone(),
                min: v[0],
                q1: stats::quantile_sorted(&v, 0.25),
                median: stats::quantile_sorted(&v, 0.5),
                q3: stats::quantile_sorted(&v, 0.75),
                max: v[v.len() - 1],
            }
        })
        .collect();
    Ok(PlotSpec::Box {
        title: title.to_string(),
        boxes,
    })
}

// ---------------------------------------------------------------------------
// Exports

pub fn export_plot(spec: &PlotSpec, format: &str) -> Result<Vec<u8>, ReportError> {
    match format {
        "svg" => Ok(to_svg(spec).into_bytes()),
        "csv" => Ok(to_csv(spec).into_bytes()),
        "json" => Ok(serde_json::to_vec_pretty(spec).expect("plot serialization")),
        other => Err(ReportError::UnsupportedFormat(other.to_string())),
    }
}

pub fn to_csv(spec: &PlotSpec) -> String {
    let mut out = String::new();
    match spec {
        PlotSpec::Xy { series, .. } => {
            out.push_str("series,x,y\n");
            for s in series {
                for (x, y) in s.x.iter().zip(&s.y) {
                    out.push_str(&format!("{},{x},{y}\n", s.name));
                }
            }
        }
        PlotSpec::Heatmap { labels, matrix, .. } => {
            out.push(',');
            out.push_str(&labels.join(","));
            out.push('\n');
            for (label, row) in labels.iter().zip(matrix) {
                out.push_str(label);
                for v in row {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        PlotSpec::Box { boxes, .. } => {
            out.push_str("series,min,q1,median,q3,max\n");
            for b in boxes {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    b.name, b.min, b.q1, b.median, b.q3, b.max
                ));
            }
        }
    }
    out
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 48.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fnum(v: f64) -> String {
    format!("{v:.2}")
}

struct Scale {
    min: f64,
    max: f64,
    lo_px: f64,
    hi_px: f64,
}

impl Scale {
    fn new(min: f64, max: f64, lo_px: f64, hi_px: f64) -> Scale {
        let (min, max) = if min == max {
            (min - 1.0, max + 1.0)
        } else {
            (min, max)
        };
        Scale { min, max, lo_px, hi_px }
    }

    fn px(&self, v: f64) -> f64 {
        self.lo_px + (v - self.min) / (self.max - self.min) * (self.hi_px - self.lo_px)
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Deterministic, self-contained static SVG rendering.
pub fn to_svg(spec: &PlotSpec) -> String {
    let mut body = String::new();
    let title = match spec {
        PlotSpec::Xy { title, .. } | PlotSpec::Heatmap { title, .. } | PlotSpec::Box { title, .. } => title,
    };
    body.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        fnum(SVG_W / 2.0),
        esc(title)
    ));
    // axes frame
    body.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        fnum(MARGIN),
        fnum(MARGIN),
        fnum(SVG_W - 2.0 * MARGIN),
        fnum(SVG_H - 2.0 * MARGIN)
    ));

    match spec {
        PlotSpec::Xy { series, annotations, .. } => {
            fn finite(vals: &[f64]) -> impl Iterator<Item = f64> + '_ {
                vals.iter().copied().filter(|v| v.is_finite())
            }
            let mut xs: Vec<f64> = Vec::new();
            let mut ys: Vec<f64> = Vec::new();
            for s in series {
                xs.extend(finite(&s.x));
                ys.extend(finite(&s.y));
            }
            for a in annotations {
                match a {
                    Annotation::Marker { x, y, .. } => {
                        xs.push(*x);
                        ys.push(*y);
                    }
                    Annotation::VLine { x, .. } => xs.push(*x),
                    Annotation::HLine { y, .. } => ys.push(*y),
                    Annotation::Band { x, low, high } => {
                        xs.extend(finite(x));
                        ys.extend(finite(low));
                        ys.extend(finite(high));
                    }
                }
            }
            if xs.is_empty() {
                // empty plot: axes only
                return svg_wrap(&body);
            }
            let xmin = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let xmax = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sx = Scale::new(xmin, xmax, MARGIN, SVG_W - MARGIN);
            let sy = Scale::new(ymin, ymax, SVG_H - MARGIN, MARGIN);
            for a in annotations {
                if let Annotation::Band { x, low, high } = a {
                    let mut pts = String::new();
                    for (xi, lo) in x.iter().zip(low) {
                        pts.push_str(&format!("{},{} ", fnum(sx.px(*xi)), fnum(sy.px(*lo))));
                    }
                    for (xi, hi) in x.iter().zip(high).rev() {
                        pts.push_str(&format!("{},{} ", fnum(sx.px(*xi)), fnum(sy.px(*hi))));
                    }
                    body.push_str(&format!(
                        "<polygon points=\"{}\" fill=\"#cccccc\" fill-opacity=\"0.5\" stroke=\"none\"/>",
                        pts.trim_end()
                    ));
                }
            }
            for (i, s) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                let mut pts = String::new();
                for (x, y) in s.x.iter().zip(&s.y) {
                    if x.is_finite() && y.is_finite() {
                        pts.push_str(&format!("{},{} ", fnum(sx.px(*x)), fnum(sy.px(*y))));
                    }
                }
                body.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\"/>",
                    pts.trim_end(),
                    color
                ));
            }
            for a in annotations {
                match a {
                    Annotation::Marker { x, y, label } => body.push_str(&format!(
                        "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"red\"><title>{}</title></circle>",
                        fnum(sx.px(*x)),
                        fnum(sy.px(*y)),
                        esc(label)
                    )),
                    Annotation::VLine { x, label } => body.push_str(&format!(
                        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"purple\" stroke-dasharray=\"4 2\"><title>{3}</title></line>",
                        fnum(sx.px(*x)),
                        fnum(MARGIN),
                        fnum(SVG_H - MARGIN),
                        esc(label)
                    )),
                    Annotation::HLine { y, label } => body.push_str(&format!(
                        "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"darkorange\" stroke-dasharray=\"4 2\"><title>{3}</title></line>",
                        fnum(sy.px(*y)),
                        fnum(MARGIN),
                        fnum(SVG_W - MARGIN),
                        esc(label)
                    )),
                    Annotation::Band { .. } => {}
                }
            }
        }
        PlotSpec::Heatmap { labels, matrix, .. } => {
            let n = labels.len().max(1) as f64;
            let cell_w = (SVG_W - 2.0 * MARGIN) / n;
            let cell_h = (SVG_H - 2.0 * MARGIN) / n;
            for (i, row) in matrix.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    // map [-1, 1] onto blue..white..red
                    let t = ((v.clamp(-1.0, 1.0)) + 1.0) / 2.0;
                    let r = (255.0 * t) as u8;
                    let b = (255.0 * (1.0 - t)) as u8;
                    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
                    body.push_str(&format!(
                        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({r},{g},{b})\"><title>{} / {}: {}</title></rect>",
                        fnum(MARGIN + j as f64 * cell_w),
                        fnum(MARGIN + i as f64 * cell_h),
                        fnum(cell_w),
                        fnum(cell_h),
                        esc(&labels[i]),
                        esc(&labels[j]),
                        stats::fmt_sig4(v)
                    ));
                }
            }
            for (i, label) in labels.iter().enumerate() {
                body.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
                    fnum(MARGIN - 4.0),
                    fnum(MARGIN + (i as f64 + 0.5) * cell_h),
                    esc(label)
                ));
            }
        }
        PlotSpec::Box { boxes, .. } => {
            let n = boxes.len().max(1) as f64;
            let slot = (SVG_W - 2.0 * MARGIN) / n;
            let vmin = boxes.iter().map(|b| b.min).fold(f64::INFINITY, f64::min);
            let vmax = boxes.iter().map(|b| b.max).fold(f64::NEG_INFINITY, f64::max);
            let sy = Scale::new(vmin, vmax, SVG_H - MARGIN, MARGIN);
            for (i, b) in boxes.iter().enumerate() {
                let cx = MARGIN + (i as f64 + 0.5) * slot;
                let half = slot * 0.25;
                body.push_str(&format!(
                    "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>",
                    fnum(cx),
                    fnum(sy.px(b.min)),
                    fnum(sy.px(b.max))
                ));
                body.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#9ecae1\" stroke=\"black\"/>",
                    fnum(cx - half),
                    fnum(sy.px(b.q3)),
                    fnum(2.0 * half),
                    fnum((sy.px(b.q1) - sy.px(b.q3)).abs())
                ));
                body.push_str(&format!(
                    "<line x1=\"{}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>",
                    fnum(cx - half),
                    fnum(sy.px(b.median)),
                    fnum(cx + half)
                ));
                body.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
                    fnum(cx),
                    fnum(SVG_H - MARGIN + 14.0),
                    esc(&b.name)
                ));
            }
        }
    }
    svg_wrap(&body)
}

fn svg_wrap(body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {0} {1}\">{body}</svg>\n",
        SVG_W as u32, SVG_H as u32
    )
}
