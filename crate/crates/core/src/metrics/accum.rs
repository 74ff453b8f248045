//! Integer-count accumulators. Every field is a count, so merging is exact
//! and the result does not depend on how pixels were sharded.

use crate::fusion::quantize_score;
use crate::model::{EvalUnit, IGNORE_LABEL};

use super::curve::{CurveAccumulator, Polarity, SCORE_LEVELS};
use super::{MetricsError, Result};

/// `C x C` counts, row = ground truth, column = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn add(&mut self, gt: u8, pred: u8) {
        self.counts[gt as usize * self.classes + pred as usize] += 1;
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if self.classes != other.classes {
            return Err(MetricsError::ConfigMismatch(format!(
                "confusion matrices for {} and {} classes",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Equal-width confidence bins over `[0, 1]`. Bins are half-open
/// `[lo, hi)` except the last, which is closed. Confidence sums are kept
/// as sums of 8-bit levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationAccumulator {
    bins: usize,
    bin_of_level: Vec<usize>,
    count: Vec<u64>,
    level_sum: Vec<u64>,
    correct: Vec<u64>,
}

impl CalibrationAccumulator {
    pub fn new(bins: usize) -> Self {
        assert!(bins >= 1, "calibration needs at least one bin");
        // floor(level / 255 * bins), computed exactly.
        let bin_of_level = (0..SCORE_LEVELS)
            .map(|q| (q * bins / 255).min(bins - 1))
            .collect();
        Self {
            bins,
            bin_of_level,
            count: vec![0; bins],
            level_sum: vec![0; bins],
            correct: vec![0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn add(&mut self, level: u8, correct: bool) {
        let b = self.bin_of_level[level as usize];
        self.count[b] += 1;
        self.level_sum[b] += level as u64;
        self.correct[b] += correct as u64;
    }

    pub fn total(&self) -> u64 {
        self.count.iter().sum()
    }

    /// `(count, mean confidence, accuracy)` per bin; empty bins are `None`.
    pub fn reliability(&self) -> Vec<Option<(u64, f64, f64)>> {
        (0..self.bins)
            .map(|b| {
                let n = self.count[b];
                (n > 0).then(|| {
                    (
                        n,
                        self.level_sum[b] as f64 / (255.0 * n as f64),
                        self.correct[b] as f64 / n as f64,
                    )
                })
            })
            .collect()
    }

    pub fn merge(&mut self, other: &CalibrationAccumulator) -> Result<()> {
        if self.bins != other.bins {
            return Err(MetricsError::ConfigMismatch(format!(
                "calibration with {} and {} bins",
                self.bins, other.bins
            )));
        }
        for b in 0..self.bins {
            self.count[b] += other.count[b];
            self.level_sum[b] += other.level_sum[b];
            self.correct[b] += other.correct[b];
        }
        Ok(())
    }

    /// `sum_b |255 * correct_b - level_sum_b|`, which is `255 * n * ECE`.
    pub(super) fn scaled_gap(&self) -> u128 {
        (0..self.bins)
            .map(|b| (255 * self.correct[b] as i128 - self.level_sum[b] as i128).unsigned_abs())
            .sum()
    }
}

/// All accumulators for one stream of pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulatorSet {
    pub confusion: ConfusionAccumulator,
    pub calibration: CalibrationAccumulator,
    /// Positives: correct valid pixels, scored by confidence.
    pub correct: CurveAccumulator,
    /// Positives: incorrect valid pixels, scored by reversed confidence.
    pub error: CurveAccumulator,
    /// Positives: invalid pixels, scored by reversed confidence.
    pub ood: CurveAccumulator,
}

impl AccumulatorSet {
    pub fn new(classes: usize, ece_bins: usize) -> Self {
        Self {
            confusion: ConfusionAccumulator::new(classes),
            calibration: CalibrationAccumulator::new(ece_bins),
            correct: CurveAccumulator::new(Polarity::Correct),
            error: CurveAccumulator::new(Polarity::Error),
            ood: CurveAccumulator::new(Polarity::Invalid),
        }
    }

    pub fn classes(&self) -> usize {
        self.confusion.classes()
    }

    pub fn ece_bins(&self) -> usize {
        self.calibration.bins()
    }

    /// Fold one checked image into the set. Pixels labelled
    /// [`IGNORE_LABEL`] in the ground truth are skipped entirely; invalid
    /// pixels feed only the OOD curve.
    pub fn accumulate(&mut self, unit: &EvalUnit) {
        let gt = unit.gt().labels();
        let pred = unit.pred().labels();
        let conf = unit.conf().scores();
        let valid = unit.validity().valid();
        for i in 0..gt.len() {
            let g = gt[i];
            if g == IGNORE_LABEL {
                continue;
            }
            let s = conf[i];
            let reversed = quantize_score(1.0 - s);
            if valid[i] {
                let p = pred[i];
                let level = quantize_score(s);
                let hit = p == g;
                self.confusion.add(g, p);
                self.calibration.add(level, hit);
                self.correct.add(level, hit);
                self.error.add(reversed, !hit);
            }
            self.ood.add(reversed, !valid[i]);
        }
    }

    pub fn merge(&mut self, other: &AccumulatorSet) -> Result<()> {
        self.confusion.merge(&other.confusion)?;
        self.calibration.merge(&other.calibration)?;
        self.correct.merge(&other.correct)?;
        self.error.merge(&other.error)?;
        self.ood.merge(&other.ood)?;
        Ok(())
    }

    /// Owned-value merge, convenient for reductions.
    pub fn merged(mut self, other: &AccumulatorSet) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }
}
