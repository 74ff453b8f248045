//! Histogram-backed ROC and precision-recall curves.
//!
//! Scores are 8-bit levels, so a 256-bin histogram of positives and
//! negatives is an exact summary of the ranking. Each occupied bin is one
//! threshold step; ties inside a bin collapse into a single step.

use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};

pub const SCORE_LEVELS: usize = 256;

/// Which pixels count as positives for a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// Correct predictions, ranked by confidence.
    Correct,
    /// Incorrect predictions, ranked by reversed confidence.
    Error,
    /// Invalid (OOD) pixels, ranked by reversed confidence.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveAccumulator {
    polarity: Polarity,
    pos: Vec<u64>,
    neg: Vec<u64>,
}

/// One vertex of the ROC polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Cumulative true/false positive counts after a threshold step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Step {
    tp: u64,
    fp: u64,
}

impl CurveAccumulator {
    pub fn new(polarity: Polarity) -> Self {
        Self {
            polarity,
            pos: vec![0; SCORE_LEVELS],
            neg: vec![0; SCORE_LEVELS],
        }
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    #[inline]
    pub fn add(&mut self, level: u8, positive: bool) {
        if positive {
            self.pos[level as usize] += 1;
        } else {
            self.neg[level as usize] += 1;
        }
    }

    pub fn add_counts(&mut self, level: u8, positives: u64, negatives: u64) {
        self.pos[level as usize] += positives;
        self.neg[level as usize] += negatives;
    }

    pub fn positives_at(&self, level: u8) -> u64 {
        self.pos[level as usize]
    }

    pub fn negatives_at(&self, level: u8) -> u64 {
        self.neg[level as usize]
    }

    pub fn positives(&self) -> u64 {
        self.pos.iter().sum()
    }

    pub fn negatives(&self) -> u64 {
        self.neg.iter().sum()
    }

    pub fn merge(&mut self, other: &CurveAccumulator) -> Result<()> {
        if self.polarity != other.polarity {
            return Err(MetricsError::ConfigMismatch(format!(
                "cannot merge {:?} curve into {:?} curve",
                other.polarity, self.polarity
            )));
        }
        for (a, b) in self.pos.iter_mut().zip(&other.pos) {
            *a += b;
        }
        for (a, b) in self.neg.iter_mut().zip(&other.neg) {
            *a += b;
        }
        Ok(())
    }

    fn require_both(&self, metric: &'static str) -> Result<(u64, u64)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(MetricsError::Degenerate {
                metric,
                reason: if p == 0 { "no positives" } else { "no negatives" },
            });
        }
        Ok((p, n))
    }

    /// Threshold sweep from the highest level down, one step per occupied
    /// bin, starting at the origin.
    fn steps(&self) -> Vec<Step> {
        let mut steps = vec![Step { tp: 0, fp: 0 }];
        let (mut tp, mut fp) = (0, 0);
        for level in (0..SCORE_LEVELS).rev() {
            let (p, n) = (self.pos[level], self.neg[level]);
            if p + n == 0 {
                continue;
            }
            tp += p;
            fp += n;
            steps.push(Step { tp, fp });
        }
        steps
    }
}

/// ROC polyline from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(curve: &CurveAccumulator) -> Result<Vec<RocPoint>> {
    let (p, n) = curve.require_both("roc")?;
    Ok(curve
        .steps()
        .into_iter()
        .map(|s| RocPoint {
            fpr: s.fp as f64 / n as f64,
            tpr: s.tp as f64 / p as f64,
        })
        .collect())
}

/// Area under the ROC curve in percent. Trapezoids over the step
/// polyline, which counts tied positive/negative pairs as one half.
pub fn auroc(curve: &CurveAccumulator) -> Result<f64> {
    let (p, n) = curve.require_both("auroc")?;
    // Twice the Mann-Whitney count, accumulated exactly.
    let mut twice_wins: u128 = 0;
    let mut tp_above: u128 = 0;
    for level in (0..SCORE_LEVELS).rev() {
        let (pos, neg) = (curve.pos[level] as u128, curve.neg[level] as u128);
        twice_wins += neg * (2 * tp_above + pos);
        tp_above += pos;
    }
    let pairs = 2 * p as u128 * n as u128;
    Ok(100.0 * (twice_wins as f64 / pairs as f64))
}

/// False positive rate (percent) at the first point of the ROC polyline
/// whose TPR reaches `target_tpr`, interpolating linearly inside the
/// bracketing segment.
pub fn fpr_at_tpr(curve: &CurveAccumulator, target_tpr: f64) -> Result<f64> {
    let (p, n) = curve.require_both("fpr_at_tpr")?;
    let steps = curve.steps();
    Ok(100.0 * interpolate_fpr(&steps, p, n, target_tpr))
}

fn interpolate_fpr(steps: &[Step], p: u64, n: u64, target: f64) -> f64 {
    let (p, n) = (p as f64, n as f64);
    let mut prev = steps[0];
    if prev.tp as f64 / p >= target {
        return prev.fp as f64 / n;
    }
    for &s in &steps[1..] {
        if s.tp as f64 / p >= target {
            let (tpr0, tpr1) = (prev.tp as f64 / p, s.tp as f64 / p);
            let (fpr0, fpr1) = (prev.fp as f64 / n, s.fp as f64 / n);
            let t = (target - tpr0) / (tpr1 - tpr0);
            return fpr0 + t * (fpr1 - fpr0);
        }
        prev = s;
    }
    1.0
}

/// Step-wise average precision in percent: the sum over threshold steps of
/// the recall increment times the precision at that step.
pub fn average_precision(curve: &CurveAccumulator) -> Result<f64> {
    let p = curve.positives();
    if p == 0 {
        return Err(MetricsError::Degenerate {
            metric: "average_precision",
            reason: "no positives",
        });
    }
    // Positives are weighted by precision first and normalised once, so a
    // perfect ranking sums to exactly `p`.
    let mut weighted = 0.0;
    let (mut tp, mut fp) = (0u64, 0u64);
    for level in (0..SCORE_LEVELS).rev() {
        let (pos, neg) = (curve.pos[level], curve.neg[level]);
        if pos + neg == 0 {
            continue;
        }
        tp += pos;
        fp += neg;
        if pos > 0 {
            weighted += pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(100.0 * (weighted / p as f64))
}
