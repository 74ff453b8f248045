//! Summary indices and report rendering.
//!
//! Per-subset records are averaged metric by metric (semantic over every
//! subset except SMIYC, OOD over SMIYC and Synobjs), then the Semantic and
//! OOD summaries are harmonic means of the averaged records with
//! lower-is-better metrics reversed. The BRAVO index is the harmonic mean of
//! the two summaries. The alternative order (harmonic mean per subset, then
//! average) is reported alongside under `subset_mean_summaries`.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{DegeneratePolicy, OodRecord, SemanticRecord, SCORE_LEVELS, TARGET_TPR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("harmonic mean of an empty list")]
    EmptyInput,
    #[error("harmonic mean undefined: {metric} = {value}")]
    NonPositive { metric: String, value: f64 },
    #[error("{metric} = {value} is outside [0, 100]")]
    OutOfRange { metric: String, value: f64 },
    #[error("{0} is undefined (degenerate or missing)")]
    Undefined(String),
    #[error("reports are not comparable: {0}")]
    Incomparable(String),
}

pub type Result<T> = std::result::Result<T, AggregateError>;

/// The six benchmark subsets, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Acdc,
    Smiyc,
    OutOfContext,
    Synflare,
    Synobjs,
    Synrain,
}

impl Subset {
    pub const ALL: [Subset; 6] = [
        Subset::Acdc,
        Subset::Smiyc,
        Subset::OutOfContext,
        Subset::Synflare,
        Subset::Synobjs,
        Subset::Synrain,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Subset::Acdc => "acdc",
            Subset::Smiyc => "smiyc",
            Subset::OutOfContext => "outofcontext",
            Subset::Synflare => "synflare",
            Subset::Synobjs => "synobjs",
            Subset::Synrain => "synrain",
        }
    }

    pub fn from_key(key: &str) -> Option<Subset> {
        Subset::ALL.into_iter().find(|s| s.key() == key)
    }

    pub fn title(self) -> &'static str {
        match self {
            Subset::Acdc => "ACDC",
            Subset::Smiyc => "SMIYC",
            Subset::OutOfContext => "Out-of-context",
            Subset::Synflare => "Synflare",
            Subset::Synobjs => "Synobjs",
            Subset::Synrain => "Synrain",
        }
    }

    /// Semantic metrics are computed everywhere except SMIYC.
    pub fn has_semantic(self) -> bool {
        self != Subset::Smiyc
    }

    /// OOD metrics only exist where invalid pixels mark OOD objects.
    pub fn has_ood(self) -> bool {
        matches!(self, Subset::Smiyc | Subset::Synobjs)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    let named: Vec<(String, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (format!("value[{i}]"), v))
        .collect();
    harmonic_mean_named(&named)
}

/// `n / sum(1 / v)`; any non-positive input is reported by name.
pub fn harmonic_mean_named<S: AsRef<str>>(values: &[(S, f64)]) -> Result<f64> {
    if values.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    let mut inv = 0.0;
    for (name, v) in values {
        if v.is_nan() || *v <= 0.0 {
            return Err(AggregateError::NonPositive {
                metric: name.as_ref().to_string(),
                value: *v,
            });
        }
        inv += 1.0 / v;
    }
    Ok(values.len() as f64 / inv)
}

/// `100 - value` for lower-is-better metrics.
pub fn reverse_metric(value: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&value) {
        return Err(AggregateError::OutOfRange {
            metric: "reversed metric".into(),
            value,
        });
    }
    Ok(100.0 - value)
}

fn require(name: &str, v: Option<f64>) -> Result<f64> {
    v.ok_or_else(|| AggregateError::Undefined(name.to_string()))
}

pub fn semantic_summary(r: &SemanticRecord) -> Result<f64> {
    harmonic_mean_named(&[
        ("miou", r.miou),
        ("auroc", require("auroc", r.auroc)?),
        ("aupr_success", require("aupr_success", r.aupr_success)?),
        ("aupr_error", require("aupr_error", r.aupr_error)?),
        ("reversed ece", reverse_metric(r.ece)?),
        ("reversed fpr95", reverse_metric(require("fpr95", r.fpr95)?)?),
    ])
}

pub fn ood_summary(r: &OodRecord) -> Result<f64> {
    harmonic_mean_named(&[
        ("auprc", require("auprc", r.auprc)?),
        ("auroc", require("auroc", r.auroc)?),
        ("reversed fpr95", reverse_metric(require("fpr95", r.fpr95)?)?),
    ])
}

pub fn bravo_index(semantic: f64, ood: f64) -> Result<f64> {
    harmonic_mean_named(&[("semantic summary", semantic), ("ood summary", ood)])
}

fn mean_option(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Metric-by-metric arithmetic mean; a metric undefined in any input is
/// undefined in the mean.
pub fn average_semantic(records: &[&SemanticRecord]) -> Option<SemanticRecord> {
    if records.is_empty() {
        return None;
    }
    Some(SemanticRecord {
        miou: mean_option(records.iter().map(|r| Some(r.miou)))?,
        ece: mean_option(records.iter().map(|r| Some(r.ece)))?,
        auroc: mean_option(records.iter().map(|r| r.auroc)),
        fpr95: mean_option(records.iter().map(|r| r.fpr95)),
        aupr_success: mean_option(records.iter().map(|r| r.aupr_success)),
        aupr_error: mean_option(records.iter().map(|r| r.aupr_error)),
    })
}

pub fn average_ood(records: &[&OodRecord]) -> Option<OodRecord> {
    if records.is_empty() {
        return None;
    }
    Some(OodRecord {
        auprc: mean_option(records.iter().map(|r| r.auprc)),
        auroc: mean_option(records.iter().map(|r| r.auroc)),
        fpr95: mean_option(records.iter().map(|r| r.fpr95)),
    })
}

/// Everything that affects metric values. Reports are comparable only when
/// their configurations are equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub ece_bins: usize,
    pub degenerate_policy: DegeneratePolicy,
    pub score_levels: usize,
    pub confidence_quantization: String,
    pub reversed_confidence: String,
    pub target_tpr: f64,
    pub aggregation: String,
}

impl ReportConfig {
    pub fn new(ece_bins: usize, degenerate_policy: DegeneratePolicy) -> Self {
        Self {
            ece_bins,
            degenerate_policy,
            score_levels: SCORE_LEVELS,
            confidence_quantization: "round(confidence * 255), half away from zero".into(),
            reversed_confidence: "quantize(1 - confidence)".into(),
            target_tpr: TARGET_TPR,
            aggregation: "arithmetic mean over subsets, then harmonic mean".into(),
        }
    }

    /// Human-readable list of differing keys, or `None` when equal.
    pub fn differences(&self, other: &ReportConfig) -> Option<String> {
        let mut diffs = Vec::new();
        if self.ece_bins != other.ece_bins {
            diffs.push(format!("ece_bins {} vs {}", self.ece_bins, other.ece_bins));
        }
        if self.degenerate_policy != other.degenerate_policy {
            diffs.push(format!(
                "degenerate_policy {:?} vs {:?}",
                self.degenerate_policy, other.degenerate_policy
            ));
        }
        if self.score_levels != other.score_levels {
            diffs.push(format!("score_levels {} vs {}", self.score_levels, other.score_levels));
        }
        if self.confidence_quantization != other.confidence_quantization
            || self.reversed_confidence != other.reversed_confidence
        {
            diffs.push("confidence quantization".into());
        }
        if self.target_tpr != other.target_tpr {
            diffs.push(format!("target_tpr {} vs {}", self.target_tpr, other.target_tpr));
        }
        if self.aggregation != other.aggregation {
            diffs.push("aggregation order".into());
        }
        (!diffs.is_empty()).then(|| diffs.join(", "))
    }
}

/// Metric records for one subset, as produced by the metrics stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetResult {
    pub subset: Subset,
    pub items: usize,
    pub semantic: Option<SemanticRecord>,
    pub ood: Option<OodRecord>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub subset: Subset,
    pub items: usize,
    pub semantic: Option<SemanticRecord>,
    pub ood: Option<OodRecord>,
    pub semantic_summary: Option<f64>,
    pub ood_summary: Option<f64>,
    /// Harmonic mean of the subset's semantic and OOD summaries (whichever
    /// exist).
    pub harmonic_mean: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryIndices {
    pub semantic: Option<f64>,
    pub ood: Option<f64>,
    pub bravo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub engine_version: String,
    pub config: ReportConfig,
    pub subsets: Vec<SubsetReport>,
    pub averaged_semantic: Option<SemanticRecord>,
    pub averaged_ood: Option<OodRecord>,
    pub semantic_summary: Option<f64>,
    pub ood_summary: Option<f64>,
    pub bravo_index: Option<f64>,
    pub subset_mean_summaries: SummaryIndices,
    pub notes: Vec<String>,
}

fn noted<T>(notes: &mut Vec<String>, context: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{context}: {e}"));
            None
        }
    }
}

fn combine(notes: &mut Vec<String>, context: &str, semantic: Option<f64>, ood: Option<f64>) -> Option<f64> {
    match (semantic, ood) {
        (Some(s), Some(o)) => noted(notes, context, bravo_index(s, o)),
        (Some(v), None) | (None, Some(v)) => Some(v),
        (None, None) => None,
    }
}

impl BenchmarkReport {
    /// Build the full report. Subsets are ordered canonically regardless of
    /// input order.
    pub fn assemble(config: ReportConfig, mut results: Vec<SubsetResult>) -> Self {
        results.sort_by_key(|r| r.subset);
        let mut notes = Vec::new();
        let subsets: Vec<SubsetReport> = results
            .into_iter()
            .map(|r| {
                let mut sub_notes = r.notes;
                let semantic_summary = r
                    .semantic
                    .as_ref()
                    .and_then(|s| noted(&mut sub_notes, "semantic summary", semantic_summary(s)));
                let ood_summary = r
                    .ood
                    .as_ref()
                    .and_then(|o| noted(&mut sub_notes, "ood summary", ood_summary(o)));
                let harmonic_mean = combine(&mut sub_notes, "subset harmonic mean", semantic_summary, ood_summary);
                SubsetReport {
                    subset: r.subset,
                    items: r.items,
                    semantic: r.semantic,
                    ood: r.ood,
                    semantic_summary,
                    ood_summary,
                    harmonic_mean,
                    notes: sub_notes,
                }
            })
            .collect();

        let semantic_records: Vec<&SemanticRecord> = subsets
            .iter()
            .filter(|s| s.subset.has_semantic())
            .filter_map(|s| s.semantic.as_ref())
            .collect();
        let ood_records: Vec<&OodRecord> = subsets
            .iter()
            .filter(|s| s.subset.has_ood())
            .filter_map(|s| s.ood.as_ref())
            .collect();
        let averaged_semantic = average_semantic(&semantic_records);
        let averaged_ood = average_ood(&ood_records);
        let semantic_summary = averaged_semantic
            .as_ref()
            .and_then(|r| noted(&mut notes, "semantic summary", semantic_summary(r)));
        let ood_summary = averaged_ood
            .as_ref()
            .and_then(|r| noted(&mut notes, "ood summary", ood_summary(r)));
        let bravo_index = match (semantic_summary, ood_summary) {
            (Some(s), Some(o)) => noted(&mut notes, "bravo index", bravo_index(s, o)),
            _ => None,
        };

        let alt_semantic = mean_option(
            subsets
                .iter()
                .filter(|s| s.subset.has_semantic() && s.semantic.is_some())
                .map(|s| s.semantic_summary),
        );
        let alt_ood = mean_option(
            subsets
                .iter()
                .filter(|s| s.subset.has_ood() && s.ood.is_some())
                .map(|s| s.ood_summary),
        );
        let alt_bravo = match (alt_semantic, alt_ood) {
            (Some(s), Some(o)) => self::bravo_index(s, o).ok(),
            _ => None,
        };

        BenchmarkReport {
            engine_version: crate::ENGINE_VERSION.to_string(),
            config,
            subsets,
            averaged_semantic,
            averaged_ood,
            semantic_summary,
            ood_summary,
            bravo_index,
            subset_mean_summaries: SummaryIndices {
                semantic: alt_semantic,
                ood: alt_ood,
                bravo: alt_bravo,
            },
            notes,
        }
    }

    /// Names of metrics left undefined by the degenerate policy.
    pub fn degenerate_metrics(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.subsets {
            if let Some(r) = &s.semantic {
                out.extend(r.degenerate().iter().map(|m| format!("{}/semantic/{m}", s.subset)));
            }
            if let Some(r) = &s.ood {
                out.extend(r.degenerate().iter().map(|m| format!("{}/ood/{m}", s.subset)));
            }
        }
        out
    }

    pub fn subset(&self, subset: Subset) -> Option<&SubsetReport> {
        self.subsets.iter().find(|s| s.subset == subset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Table,
}

pub fn render_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serialises");
            s.push('\n');
            s
        }
        ReportFormat::Table => render_tables(&[("this run".to_string(), report)]),
    }
}

pub fn parse_report(json: &str) -> serde_json::Result<BenchmarkReport> {
    serde_json::from_str(json)
}

const DASH: &str = "-";

fn cell(v: Option<f64>, footnote: &mut bool) -> String {
    match v {
        Some(v) => format!("{v:.1}"),
        None => {
            *footnote = true;
            format!("{DASH}*")
        }
    }
}

fn table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let _ = writeln!(out, "{title}");
    let head: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(out, "{}", line(&head));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "{}", rule.join("-|-"));
    for row in rows {
        let _ = writeln!(out, "{}", line(row));
    }
    out.push('\n');
}

/// Render labelled reports as the four result tables. Rows appear in the
/// given order.
pub fn render_tables(reports: &[(String, &BenchmarkReport)]) -> String {
    let mut out = String::new();
    let mut footnote = false;

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            vec![
                label.clone(),
                cell(r.bravo_index, &mut footnote),
                cell(r.semantic_summary, &mut footnote),
                cell(r.ood_summary, &mut footnote),
            ]
        })
        .collect();
    table(&mut out, "BRAVO index", &["Method", "BRAVO", "Semantic", "OOD"], &rows);

    let mut header = vec!["Method"];
    header.extend(Subset::ALL.iter().map(|s| s.title()));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            let mut row = vec![label.clone()];
            row.extend(
                Subset::ALL
                    .iter()
                    .map(|&s| cell(r.subset(s).and_then(|s| s.harmonic_mean), &mut footnote)),
            );
            row
        })
        .collect();
    table(&mut out, "Subset harmonic means", &header, &rows);

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            let mut row = vec![label.clone()];
            match &r.averaged_semantic {
                Some(s) => row.extend(s.columns().iter().map(|(_, v)| cell(*v, &mut footnote))),
                None => row.extend((0..6).map(|_| cell(None, &mut footnote))),
            }
            row
        })
        .collect();
    table(
        &mut out,
        "Semantic metrics (averaged across all subsets except SMIYC)",
        &["Method", "mIoU", "AUPR-Error", "AUPR-Success", "AUROC", "ECE", "FPR@95"],
        &rows,
    );

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            let mut row = vec![label.clone()];
            match &r.averaged_ood {
                Some(o) => row.extend(o.columns().iter().map(|(_, v)| cell(*v, &mut footnote))),
                None => row.extend((0..3).map(|_| cell(None, &mut footnote))),
            }
            row
        })
        .collect();
    table(
        &mut out,
        "OOD metrics (averaged over SMIYC and Synobjs)",
        &["Method", "AUPRC", "AUROC", "FPR@95"],
        &rows,
    );

    if footnote {
        let _ = writeln!(
            out,
            "* {DASH} undefined: degenerate curve under degenerate-policy=error, or no data for this cell"
        );
    }
    out
}

/// Comparison table over several reports, sorted by BRAVO index
/// (descending, undefined last). Refuses reports with differing configs.
pub fn render_comparison(reports: &[(String, BenchmarkReport)]) -> Result<String> {
    let Some((first_label, first)) = reports.first() else {
        return Err(AggregateError::Incomparable("no reports given".into()));
    };
    for (label, r) in &reports[1..] {
        if let Some(diff) = first.config.differences(&r.config) {
            return Err(AggregateError::Incomparable(format!(
                "{label} differs from {first_label}: {diff}"
            )));
        }
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (reports[a].1.bravo_index, reports[b].1.bravo_index);
        match (x, y) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
    });
    let sorted: Vec<(String, &BenchmarkReport)> = order
        .into_iter()
        .map(|i| (reports[i].0.clone(), &reports[i].1))
        .collect();
    Ok(render_tables(&sorted))
}
