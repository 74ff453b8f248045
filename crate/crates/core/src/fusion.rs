//! Decoder outputs to class and confidence maps.
//!
//! Two decoders are supported. The linear decoder produces per-class
//! segmentation logits which are upsampled, pushed through a softmax and
//! reduced with argmax/max. The mask-classification decoder produces `N`
//! mask logits plus an `N x (C+1)` class-logit matrix whose last column is
//! the "no object" class; per-pixel class scores are the sum over masks of
//! `sigmoid(mask) * softmax(class)[..C]`.
//!
//! Upsampling uses half-pixel centres: destination index `d` samples the
//! source at `(d + 0.5) * src / dst - 0.5`, clamped to the valid range, with
//! separable linear interpolation. Nothing is materialised at full
//! resolution beyond one output row per channel.

use thiserror::Error;

use crate::model::{
    ClassCatalog, ClassMap, ConfidenceMap, LogitsTensor, Matrix, ModelError, TensorKind,
};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("downscaling requested: {src_h}x{src_w} -> {dst_h}x{dst_w}")]
    Downscale {
        src_h: usize,
        src_w: usize,
        dst_h: usize,
        dst_w: usize,
    },
    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("mask decoder produced no masks")]
    NoMasks,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, FusionError>;

/// Class map and confidence map of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrediction {
    pub classes: ClassMap,
    pub confidence: ConfidenceMap,
}

/// `L[c] = bias[c] + sum_e W[c, e] * F[e]` at every patch position.
pub fn linear_decode(features: &LogitsTensor, weights: &Matrix, bias: &[f32]) -> Result<LogitsTensor> {
    let [embed, h, w] = features.dims();
    if weights.cols() != embed {
        return Err(FusionError::ShapeMismatch(format!(
            "weights have {} columns but features have {embed} channels",
            weights.cols()
        )));
    }
    if bias.len() != weights.rows() {
        return Err(FusionError::ShapeMismatch(format!(
            "bias has {} entries but weights have {} rows",
            bias.len(),
            weights.rows()
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(weights.rows() * plane);
    let mut acc = vec![0f64; plane];
    for (c, &b) in bias.iter().enumerate() {
        acc.fill(b as f64);
        for (e, &wt) in weights.row(c).iter().enumerate() {
            let wt = wt as f64;
            for (a, &f) in acc.iter_mut().zip(features.plane(e)) {
                *a += wt * f as f64;
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    Ok(LogitsTensor::new(
        TensorKind::SegLogits,
        [weights.rows(), h, w],
        out,
    )?)
}

/// Sampling table for one axis.
#[derive(Debug, Clone)]
struct AxisMap {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl AxisMap {
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let last = (src - 1) as f64;
        let mut map = AxisMap {
            lo: Vec::with_capacity(dst),
            hi: Vec::with_capacity(dst),
            frac: Vec::with_capacity(dst),
        };
        for d in 0..dst {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            map.lo.push(lo);
            map.hi.push((lo + 1).min(src - 1));
            map.frac.push(s - lo as f64);
        }
        map
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

/// Streams an upsampled tensor one output row at a time.
struct RowUpsampler<'a> {
    src: &'a LogitsTensor,
    ys: AxisMap,
    xs: AxisMap,
    column: Vec<f64>,
}

impl<'a> RowUpsampler<'a> {
    fn new(src: &'a LogitsTensor, target_h: usize, target_w: usize) -> Result<Self> {
        let [_, h, w] = src.dims();
        if target_h < h || target_w < w {
            return Err(FusionError::Downscale {
                src_h: h,
                src_w: w,
                dst_h: target_h,
                dst_w: target_w,
            });
        }
        Ok(Self {
            src,
            ys: AxisMap::new(h, target_h),
            xs: AxisMap::new(w, target_w),
            column: vec![0.0; w],
        })
    }

    fn target_width(&self) -> usize {
        self.xs.lo.len()
    }

    /// Fill `out` (channel-major, `K x W`) with output row `y`.
    fn row(&mut self, y: usize, out: &mut [f64]) {
        let [k, _, w] = self.src.dims();
        let tw = self.target_width();
        let (y0, y1, ty) = (self.ys.lo[y], self.ys.hi[y], self.ys.frac[y]);
        for c in 0..k {
            let plane = self.src.plane(c);
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for ((dst, &a), &b) in self.column.iter_mut().zip(r0).zip(r1) {
                *dst = lerp(a as f64, b as f64, ty);
            }
            let out_row = &mut out[c * tw..(c + 1) * tw];
            for (x, o) in out_row.iter_mut().enumerate() {
                *o = lerp(self.column[self.xs.lo[x]], self.column[self.xs.hi[x]], self.xs.frac[x]);
            }
        }
    }
}

/// Bilinear upsampling of every channel to `target_h x target_w`.
pub fn bilinear_upsample(t: &LogitsTensor, target_h: usize, target_w: usize) -> Result<LogitsTensor> {
    let k = t.channels();
    let mut up = RowUpsampler::new(t, target_h, target_w)?;
    let mut data = vec![0f32; k * target_h * target_w];
    let mut row = vec![0f64; k * target_w];
    let plane = target_h * target_w;
    for y in 0..target_h {
        up.row(y, &mut row);
        for c in 0..k {
            let dst = &mut data[c * plane + y * target_w..c * plane + (y + 1) * target_w];
            for (d, &v) in dst.iter_mut().zip(&row[c * target_w..(c + 1) * target_w]) {
                *d = v as f32;
            }
        }
    }
    Ok(LogitsTensor::new(t.kind(), [k, target_h, target_w], data)?)
}

/// Index and value of the maximum; ties resolve to the lowest index.
#[inline]
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn assemble(h: usize, w: usize, class_count: usize, labels: Vec<u8>, conf: Vec<f32>) -> Result<FusedPrediction> {
    let catalog = ClassCatalog::new(class_count)?;
    Ok(FusedPrediction {
        classes: ClassMap::new(h, w, labels, &catalog)?,
        confidence: ConfidenceMap::new(h, w, conf)?,
    })
}

/// Linear-decoder inference: upsample logits, softmax over classes, argmax.
pub fn linear_fuse(seg_logits: &LogitsTensor, target_h: usize, target_w: usize) -> Result<FusedPrediction> {
    let classes = seg_logits.channels();
    if classes < 2 {
        return Err(FusionError::TooFewClasses(classes));
    }
    let mut up = RowUpsampler::new(seg_logits, target_h, target_w)?;
    let mut row = vec![0f64; classes * target_w];
    let mut labels = Vec::with_capacity(target_h * target_w);
    let mut conf = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        up.row(y, &mut row);
        for x in 0..target_w {
            let logits = (0..classes).map(|c| row[c * target_w + x]);
            let (best, max) = argmax(logits.clone());
            let z: f64 = logits.map(|l| (l - max).exp()).sum();
            labels.push(best as u8);
            conf.push((1.0 / z) as f32);
        }
    }
    assemble(target_h, target_w, classes, labels, conf)
}

/// Softmax of each class-logit row with the trailing no-object column
/// dropped. Returns an `N x C` row-major table.
pub fn class_scores(class_logits: &Matrix) -> Vec<f64> {
    let cols = class_logits.cols();
    let mut out = Vec::with_capacity(class_logits.rows() * (cols - 1));
    for n in 0..class_logits.rows() {
        let row = class_logits.row(n);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps[..cols - 1].iter().map(|e| e / z));
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mask-classification inference. Per-pixel class scores are
/// `sum_n sigmoid(M'[n]) * P_C[n, c]`; the confidence is the maximum score
/// clamped to 1 since the sum over masks is not normalised.
pub fn mask2former_fuse(
    mask_logits: &LogitsTensor,
    class_logits: &Matrix,
    target_h: usize,
    target_w: usize,
) -> Result<FusedPrediction> {
    let masks = mask_logits.channels();
    if class_logits.rows() == 0 || masks == 0 {
        return Err(FusionError::NoMasks);
    }
    if class_logits.rows() != masks {
        return Err(FusionError::ShapeMismatch(format!(
            "{} class-logit rows for {masks} masks",
            class_logits.rows()
        )));
    }
    let classes = class_logits.cols().saturating_sub(1);
    if classes < 2 {
        return Err(FusionError::TooFewClasses(classes));
    }
    let pc = class_scores(class_logits);
    let mut up = RowUpsampler::new(mask_logits, target_h, target_w)?;
    let mut row = vec![0f64; masks * target_w];
    let mut pm = vec![0f64; masks];
    let mut fused = vec![0f64; classes];
    let mut labels = Vec::with_capacity(target_h * target_w);
    let mut conf = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        up.row(y, &mut row);
        for x in 0..target_w {
            for (n, p) in pm.iter_mut().enumerate() {
                *p = sigmoid(row[n * target_w + x]);
            }
            fused.fill(0.0);
            for (n, &p) in pm.iter().enumerate() {
                for (f, &s) in fused.iter_mut().zip(&pc[n * classes..(n + 1) * classes]) {
                    *f += p * s;
                }
            }
            let (best, max) = argmax(fused.iter().copied());
            labels.push(best as u8);
            conf.push(max.min(1.0) as f32);
        }
    }
    assemble(target_h, target_w, classes, labels, conf)
}

/// `round(score * 255)`, halves away from zero.
#[inline]
pub fn quantize_score(score: f32) -> u8 {
    (score as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

#[inline]
pub fn dequantize_score(level: u8) -> f32 {
    level as f32 / 255.0
}

/// 8-bit storage form of a confidence map.
pub fn quantize_confidence(conf: &ConfidenceMap) -> Vec<u8> {
    conf.scores().iter().map(|&s| quantize_score(s)).collect()
}
