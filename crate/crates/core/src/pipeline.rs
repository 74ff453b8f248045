//! Manifest-level fusion and evaluation.
//!
//! Items are processed independently, possibly on several workers, and
//! each produces its own accumulators. Accumulators are then merged
//! subset by subset in manifest order, so the report does not depend on the
//! worker count or on scheduling.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::aggregate::{BenchmarkReport, ReportConfig, SubsetResult};
use crate::fusion::{linear_fuse, mask2former_fuse, FusedPrediction, FusionError};
use crate::io::{self, FusedPaths, IoError, Item, LogitsPaths, Manifest, SubsetEntry};
use crate::metrics::{
    ood_metrics, semantic_metrics, AccumulatorSet, DegeneratePolicy, MetricsError, DEFAULT_ECE_BINS,
};
use crate::model::{validate_pair, ClassCatalog, EvalUnit, ModelError, TensorKind};
use crate::par;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("item has no logits for decoder {0}")]
    MissingLogits(&'static str),
    #[error("item has neither fused maps nor logits")]
    NothingToEvaluate,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Linear,
    Mask2Former,
}

impl DecoderKind {
    pub fn key(self) -> &'static str {
        match self {
            DecoderKind::Linear => "linear",
            DecoderKind::Mask2Former => "mask2former",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ece_bins: usize,
    pub policy: DegeneratePolicy,
    pub workers: usize,
    /// Forces in-process fusion from logits of this kind, ignoring any
    /// fused maps in the manifest.
    pub decoder: Option<DecoderKind>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ece_bins: DEFAULT_ECE_BINS,
            policy: DegeneratePolicy::Error,
            workers: 1,
            decoder: None,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(PipelineError::Config("worker count must be at least 1".into()));
        }
        if self.ece_bins < 2 {
            return Err(PipelineError::Config(format!("ece_bins must be at least 2, got {}", self.ece_bins)));
        }
        Ok(())
    }
}

/// One item that could not be processed.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFailure {
    pub subset: String,
    pub id: String,
    pub message: String,
}

impl std::fmt::Display for ItemFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}: {}", self.subset, self.id, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: BenchmarkReport,
    pub failures: Vec<ItemFailure>,
    pub warnings: Vec<String>,
}

impl EvalOutcome {
    /// True when every item was processed and no metric is left undefined.
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty() && self.report.degenerate_metrics().is_empty()
    }
}

fn logits_kind(paths: &LogitsPaths) -> DecoderKind {
    match paths {
        LogitsPaths::Linear { .. } => DecoderKind::Linear,
        LogitsPaths::Mask2Former { .. } => DecoderKind::Mask2Former,
    }
}

/// Fuse an item's logits at the given extent.
pub fn fuse_item(item: &Item, decoder: Option<DecoderKind>, height: usize, width: usize) -> Result<FusedPrediction> {
    let paths = item.logits.as_ref().ok_or(PipelineError::MissingLogits(
        decoder.map(DecoderKind::key).unwrap_or("any"),
    ))?;
    if let Some(kind) = decoder {
        if logits_kind(paths) != kind {
            return Err(PipelineError::MissingLogits(kind.key()));
        }
    }
    let fused = match paths {
        LogitsPaths::Linear { seg_logits } => {
            let t = io::read_tensor(seg_logits, TensorKind::SegLogits)?;
            linear_fuse(&t, height, width)?
        }
        LogitsPaths::Mask2Former {
            mask_logits,
            class_logits,
        } => {
            let m = io::read_tensor(mask_logits, TensorKind::MaskLogits)?;
            let c = io::read_tensor(class_logits, TensorKind::ClassLogits)?.to_matrix();
            mask2former_fuse(&m, &c, height, width)?
        }
    };
    Ok(fused)
}

/// Read (or fuse) everything one item needs and validate it.
pub fn load_unit(item: &Item, catalog: &ClassCatalog, decoder: Option<DecoderKind>) -> Result<EvalUnit> {
    let gt = io::read_class_map(&item.gt, catalog)?;
    let validity = item.validity.as_deref().map(io::read_validity_mask).transpose()?;
    let (pred, conf) = match (&item.fused, decoder) {
        (Some(f), None) => (io::read_class_map(&f.prediction, catalog)?, io::read_confidence_map(&f.confidence)?),
        (None, None) if item.logits.is_none() => return Err(PipelineError::NothingToEvaluate),
        _ => {
            let (h, w) = item.target.unwrap_or((gt.height(), gt.width()));
            let fused = fuse_item(item, decoder, h, w)?;
            (fused.classes, fused.confidence)
        }
    };
    Ok(validate_pair(pred, conf, gt, validity, catalog)?)
}

fn accumulate_item(item: &Item, catalog: &ClassCatalog, opts: &EvalOptions) -> Result<AccumulatorSet> {
    let unit = load_unit(item, catalog, opts.decoder)?;
    let mut acc = AccumulatorSet::new(catalog.class_count(), opts.ece_bins);
    acc.accumulate(&unit);
    Ok(acc)
}

fn flatten(manifest: &Manifest) -> Vec<(usize, &Item)> {
    manifest
        .subsets
        .iter()
        .enumerate()
        .flat_map(|(si, s)| s.items.iter().map(move |it| (si, it)))
        .collect()
}

/// Merged accumulators per manifest subset (in manifest order) plus
/// per-item failures.
pub fn accumulate_manifest(
    manifest: &Manifest,
    opts: &EvalOptions,
) -> Result<(Vec<Option<AccumulatorSet>>, Vec<ItemFailure>)> {
    opts.validate()?;
    let catalog = manifest.catalog;
    let work = flatten(manifest);
    let results = par::map_ordered(&work, opts.workers, |&(si, item)| {
        let r = accumulate_item(item, &catalog, opts);
        log::debug!("{}/{}: {}", manifest.subsets[si].subset, item.id, if r.is_ok() { "ok" } else { "failed" });
        r
    });

    let mut merged: Vec<Option<AccumulatorSet>> = vec![None; manifest.subsets.len()];
    let mut failures = Vec::new();
    for (&(si, item), r) in work.iter().zip(results) {
        match r {
            Ok(acc) => match &mut merged[si] {
                Some(m) => m.merge(&acc)?,
                slot @ None => *slot = Some(acc),
            },
            Err(e) => failures.push(ItemFailure {
                subset: manifest.subsets[si].subset.key().to_string(),
                id: item.id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok((merged, failures))
}

fn keep<T>(notes: &mut Vec<String>, label: &str, r: std::result::Result<T, MetricsError>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{label}: {e}"));
            None
        }
    }
}

fn subset_result(entry: &SubsetEntry, acc: &AccumulatorSet, policy: DegeneratePolicy) -> SubsetResult {
    let mut notes = Vec::new();
    let semantic = if entry.subset.has_semantic() {
        keep(&mut notes, "semantic", semantic_metrics(acc, policy))
    } else {
        None
    };
    let ood = if entry.subset.has_ood() {
        keep(&mut notes, "ood", ood_metrics(acc, policy))
    } else {
        None
    };
    for (name, v) in semantic.iter().flat_map(|r| r.columns()) {
        if v.is_none() {
            notes.push(format!("semantic {name} is degenerate"));
        }
    }
    for (name, v) in ood.iter().flat_map(|r| r.columns()) {
        if v.is_none() {
            notes.push(format!("ood {name} is degenerate"));
        }
    }
    SubsetResult {
        subset: entry.subset,
        items: entry.items.len(),
        semantic,
        ood,
        notes,
    }
}

/// Evaluate every item of the manifest and assemble the report.
pub fn evaluate(manifest: &Manifest, opts: &EvalOptions) -> Result<EvalOutcome> {
    let (merged, failures) = accumulate_manifest(manifest, opts)?;
    let mut warnings = Vec::new();
    let mut results = Vec::new();
    for (entry, acc) in manifest.subsets.iter().zip(&merged) {
        match acc {
            _ if entry.items.is_empty() => {
                warnings.push(format!("subset {} has no items and is omitted", entry.subset));
            }
            None => warnings.push(format!("subset {}: every item failed, subset omitted", entry.subset)),
            Some(acc) => results.push(subset_result(entry, acc, opts.policy)),
        }
    }
    let report = BenchmarkReport::assemble(ReportConfig::new(opts.ece_bins, opts.policy), results);
    Ok(EvalOutcome {
        report,
        failures,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct FuseOutcome {
    /// Manifest pointing at the written maps, also saved as
    /// `<out>/manifest.json`.
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub failures: Vec<ItemFailure>,
}

fn fuse_one(item: &Item, subset: &str, out: &Path, catalog: &ClassCatalog, decoder: Option<DecoderKind>) -> Result<FusedPaths> {
    let (h, w) = match item.target {
        Some(t) => t,
        None => {
            let gt = io::read_class_map(&item.gt, catalog)?;
            (gt.height(), gt.width())
        }
    };
    let fused = fuse_item(item, decoder, h, w)?;
    fused.classes.check_catalog("prediction", catalog)?;
    let paths = FusedPaths {
        prediction: out.join(subset).join(format!("{}_pred.png", item.id)),
        confidence: out.join(subset).join(format!("{}_conf.png", item.id)),
    };
    io::write_class_map(&paths.prediction, &fused.classes)?;
    io::write_confidence_map(&paths.confidence, &fused.confidence)?;
    Ok(paths)
}

/// Fuse the logits of every item into 8-bit maps under `out`. Existing
/// files are overwritten. Failed items keep their original entry in the
/// written manifest.
pub fn fuse_manifest(manifest: &Manifest, out: &Path, workers: usize, decoder: Option<DecoderKind>) -> Result<FuseOutcome> {
    if workers == 0 {
        return Err(PipelineError::Config("worker count must be at least 1".into()));
    }
    let work = flatten(manifest);
    let catalog = manifest.catalog;
    let results = par::map_ordered(&work, workers, |&(si, item)| {
        fuse_one(item, manifest.subsets[si].subset.key(), out, &catalog, decoder)
    });
    let mut written = manifest.clone();
    let mut failures = Vec::new();
    let mut cursor = vec![0usize; manifest.subsets.len()];
    for (&(si, item), r) in work.iter().zip(results) {
        let slot = &mut written.subsets[si].items[cursor[si]];
        cursor[si] += 1;
        match r {
            Ok(paths) => slot.fused = Some(paths),
            Err(e) => failures.push(ItemFailure {
                subset: manifest.subsets[si].subset.key().to_string(),
                id: item.id.clone(),
                message: e.to_string(),
            }),
        }
    }
    let manifest_path = out.join("manifest.json");
    written.write(&manifest_path)?;
    Ok(FuseOutcome {
        manifest: written,
        manifest_path,
        failures,
    })
}
