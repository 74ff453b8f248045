//! Semantic and OOD metrics over streamed pixels.
//!
//! Pixels are folded into an [`AccumulatorSet`] of integer counts; every
//! metric is then read off the counts. All values are in percent.

mod accum;
mod curve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use accum::{AccumulatorSet, CalibrationAccumulator, ConfusionAccumulator};
pub use curve::{
    auroc, average_precision, fpr_at_tpr, roc_curve, CurveAccumulator, Polarity, RocPoint,
    SCORE_LEVELS,
};

/// TPR operating point for the FPR@95 metrics.
pub const TARGET_TPR: f64 = 0.95;

/// ECE bin count used when none is configured.
pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{0}: no pixels were accumulated")]
    Empty(&'static str),
    #[error("{metric} is degenerate: {reason}")]
    Degenerate {
        metric: &'static str,
        reason: &'static str,
    },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// What to report when a curve has no positives or no negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegeneratePolicy {
    /// Leave the metric undefined and fail the run.
    #[default]
    Error,
    /// Report 0.
    Zero,
    /// Report 100.
    One,
}

impl DegeneratePolicy {
    fn resolve(self, outcome: Result<f64>) -> Result<Option<f64>> {
        match (outcome, self) {
            (Ok(v), _) => Ok(Some(v)),
            (Err(MetricsError::Degenerate { .. }), DegeneratePolicy::Error) => Ok(None),
            (Err(MetricsError::Degenerate { .. }), DegeneratePolicy::Zero) => Ok(Some(0.0)),
            (Err(MetricsError::Degenerate { .. }), DegeneratePolicy::One) => Ok(Some(100.0)),
            (Err(e), _) => Err(e),
        }
    }
}

/// Mean IoU over classes with a non-empty union.
pub fn miou(conf: &ConfusionAccumulator) -> Result<f64> {
    let c = conf.classes();
    if conf.total() == 0 {
        return Err(MetricsError::Empty("miou"));
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for k in 0..c {
        let diag = conf.get(k, k);
        let row: u64 = (0..c).map(|p| conf.get(k, p)).sum();
        let col: u64 = (0..c).map(|g| conf.get(g, k)).sum();
        let union = row + col - diag;
        if union == 0 {
            continue;
        }
        sum += diag as f64 / union as f64;
        present += 1;
    }
    Ok(100.0 * sum / present as f64)
}

/// Expected calibration error: bin-weighted `|accuracy - confidence|`.
pub fn ece(cal: &CalibrationAccumulator) -> Result<f64> {
    let n = cal.total();
    if n == 0 {
        return Err(MetricsError::Empty("ece"));
    }
    Ok(100.0 * (cal.scaled_gap() as f64 / (255.0 * n as f64)))
}

/// The six semantic metrics of one subset (or of an average of subsets).
/// `None` marks a degenerate metric under [`DegeneratePolicy::Error`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRecord {
    pub miou: f64,
    pub ece: f64,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub aupr_success: Option<f64>,
    pub aupr_error: Option<f64>,
}

impl SemanticRecord {
    /// `(name, value)` in the column order of the semantic results table.
    pub fn columns(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("miou", Some(self.miou)),
            ("aupr_error", self.aupr_error),
            ("aupr_success", self.aupr_success),
            ("auroc", self.auroc),
            ("ece", Some(self.ece)),
            ("fpr95", self.fpr95),
        ]
    }

    pub fn degenerate(&self) -> Vec<&'static str> {
        self.columns()
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| *k)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRecord {
    pub auprc: Option<f64>,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
}

impl OodRecord {
    pub fn columns(&self) -> [(&'static str, Option<f64>); 3] {
        [
            ("auprc", self.auprc),
            ("auroc", self.auroc),
            ("fpr95", self.fpr95),
        ]
    }

    pub fn degenerate(&self) -> Vec<&'static str> {
        self.columns()
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| *k)
            .collect()
    }
}

fn name_degenerate(metric: &'static str, r: Result<f64>) -> Result<f64> {
    r.map_err(|e| match e {
        MetricsError::Degenerate { reason, .. } => MetricsError::Degenerate { metric, reason },
        other => other,
    })
}

pub fn semantic_metrics(acc: &AccumulatorSet, policy: DegeneratePolicy) -> Result<SemanticRecord> {
    let miou = miou(&acc.confusion)?;
    let ece = ece(&acc.calibration)?;
    Ok(SemanticRecord {
        miou,
        ece,
        auroc: policy.resolve(name_degenerate("auroc", auroc(&acc.correct)))?,
        fpr95: policy.resolve(name_degenerate("fpr95", fpr_at_tpr(&acc.correct, TARGET_TPR)))?,
        aupr_success: policy.resolve(name_degenerate("aupr_success", average_precision(&acc.correct)))?,
        aupr_error: policy.resolve(name_degenerate("aupr_error", average_precision(&acc.error)))?,
    })
}

pub fn ood_metrics(acc: &AccumulatorSet, policy: DegeneratePolicy) -> Result<OodRecord> {
    if acc.ood.positives() + acc.ood.negatives() == 0 {
        return Err(MetricsError::Empty("ood"));
    }
    Ok(OodRecord {
        auprc: policy.resolve(name_degenerate("auprc", average_precision(&acc.ood)))?,
        auroc: policy.resolve(name_degenerate("auroc", auroc(&acc.ood)))?,
        fpr95: policy.resolve(name_degenerate("fpr95", fpr_at_tpr(&acc.ood, TARGET_TPR)))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn confusion(gt: &[u8], pred: &[u8], classes: usize) -> ConfusionAccumulator {
        let mut c = ConfusionAccumulator::new(classes);
        gt.iter().zip(pred).for_each(|(&g, &p)| c.add(g, p));
        c
    }

    #[test]
    fn miou_two_by_two() {
        // IoU0 = 1/2, IoU1 = 2/3.
        let c = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2);
        let expected = 100.0 * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((miou(&c).unwrap() - expected).abs() < 1e-12);
        assert!((miou(&c).unwrap() - 58.33).abs() < 0.01);
    }

    #[test]
    fn miou_perfect_and_absent_classes() {
        let c = confusion(&[0, 1, 2], &[0, 1, 2], 6);
        assert_eq!(miou(&c).unwrap(), 100.0);
        let a = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2);
        let b = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 8);
        assert_eq!(miou(&a).unwrap(), miou(&b).unwrap());
        assert_eq!(miou(&ConfusionAccumulator::new(3)), Err(MetricsError::Empty("miou")));
    }

    fn calibration(bins: usize, pixels: &[(f32, bool)]) -> CalibrationAccumulator {
        let mut c = CalibrationAccumulator::new(bins);
        for &(s, ok) in pixels {
            c.add(crate::fusion::quantize_score(s), ok);
        }
        c
    }

    #[test]
    fn ece_examples() {
        // 0.6 and 0.9 quantize to 153/255 and 230/255, both in the upper
        // bin; mean confidence (2*153 + 2*230) / (4*255) against accuracy
        // 3/4 leaves a gap of |765 - 766| / 1020.
        let c = calibration(2, &[(0.9, true), (0.9, false), (0.6, true), (0.6, true)]);
        let expected = 100.0 * (765.0f64 - 766.0).abs() / 1020.0;
        assert!((ece(&c).unwrap() - expected).abs() < 1e-12);
        assert!(ece(&c).unwrap() < 0.1);
        let c = calibration(2, &[(0.8, true), (0.8, false)]);
        assert!((ece(&c).unwrap() - 30.0).abs() < 1e-12);
        let c = calibration(15, &[(1.0, true); 5]);
        assert_eq!(ece(&c).unwrap(), 0.0);
        assert!(ece(&CalibrationAccumulator::new(15)).is_err());
    }

    #[test]
    fn perfect_prediction_has_degenerate_error_curve() {
        let mut acc = AccumulatorSet::new(2, 15);
        for _ in 0..4 {
            acc.confusion.add(1, 1);
            acc.calibration.add(255, true);
            acc.correct.add(255, true);
            acc.error.add(0, false);
        }
        let r = semantic_metrics(&acc, DegeneratePolicy::Error).unwrap();
        assert_eq!(r.miou, 100.0);
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.aupr_error, None);
        assert_eq!(r.degenerate(), vec!["aupr_error", "auroc", "fpr95"]);
        let r = semantic_metrics(&acc, DegeneratePolicy::Zero).unwrap();
        assert_eq!(r.aupr_error, Some(0.0));
        let r = semantic_metrics(&acc, DegeneratePolicy::One).unwrap();
        assert_eq!(r.aupr_error, Some(100.0));
        assert_eq!(r.aupr_success, Some(100.0));
    }

    #[test]
    fn empty_set_errors() {
        let acc = AccumulatorSet::new(3, 15);
        assert!(matches!(semantic_metrics(&acc, DegeneratePolicy::Error), Err(MetricsError::Empty(_))));
        assert!(matches!(ood_metrics(&acc, DegeneratePolicy::Error), Err(MetricsError::Empty(_))));
    }
}
