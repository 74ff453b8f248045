//! Shared raster and tensor types.
//!
//! Every constructor validates its invariants, so a value that exists is a
//! value that downstream code can trust. Rasters are row-major with the
//! origin at the top-left corner, matching PNG scan order.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label used by Cityscapes trainId annotations for "do not evaluate".
pub const IGNORE_LABEL: u8 = 255;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {raster} is {actual_h}x{actual_w}, expected {expected_h}x{expected_w}")]
    DimensionMismatch {
        raster: &'static str,
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },
    #[error("{raster}: data length {actual} does not match extents (expected {expected})")]
    LengthMismatch {
        raster: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{raster}: label {label} at pixel {index} is outside 0..{class_count} and is not {IGNORE_LABEL}")]
    OutOfRangeLabel {
        raster: &'static str,
        index: usize,
        label: u8,
        class_count: u8,
    },
    #[error("confidence {score} at pixel {index} is outside [0, 1]")]
    OutOfRangeScore { index: usize, score: f32 },
    #[error("tensor element {index} is not finite ({value})")]
    NonFinite { index: usize, value: f32 },
    #[error("tensor extents must be positive, got {0:?}")]
    EmptyExtent([usize; 3]),
    #[error("invalid class catalog: {0}")]
    Catalog(String),
    #[error("prediction carries the ignore id {IGNORE_LABEL} at pixel {index}")]
    IgnoredPrediction { index: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Number of evaluated classes plus the fixed ignore id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    class_count: u8,
}

impl ClassCatalog {
    /// The 19 Cityscapes trainId classes.
    pub const CITYSCAPES: ClassCatalog = ClassCatalog { class_count: 19 };

    pub fn new(class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(ModelError::Catalog(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        if class_count >= IGNORE_LABEL as usize {
            return Err(ModelError::Catalog(format!(
                "class count {class_count} collides with ignore id {IGNORE_LABEL}"
            )));
        }
        Ok(Self {
            class_count: class_count as u8,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count as usize
    }

    pub fn ignore_id(&self) -> u8 {
        IGNORE_LABEL
    }

    pub fn accepts(&self, label: u8) -> bool {
        label < self.class_count || label == IGNORE_LABEL
    }
}

/// What a [`LogitsTensor`] holds. Class logits are the only rank-2 kind and
/// are stored as `rows x cols x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorKind {
    SegLogits,
    MaskLogits,
    ClassLogits,
    Features,
}

impl TensorKind {
    pub fn rank(self) -> usize {
        match self {
            TensorKind::ClassLogits => 2,
            _ => 3,
        }
    }
}

/// Rank-3 `channels x height x width` tensor of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsTensor {
    kind: TensorKind,
    dims: [usize; 3],
    data: Vec<f32>,
}

impl LogitsTensor {
    pub fn new(kind: TensorKind, dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(ModelError::EmptyExtent(dims));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(ModelError::LengthMismatch {
                raster: "tensor",
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::NonFinite { index, value });
        }
        Ok(Self { kind, dims, data })
    }

    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.dims[1] + y) * self.dims[2] + x]
    }

    /// One channel plane, row-major.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.dims[1] * self.dims[2];
        &self.data[c * n..(c + 1) * n]
    }

    /// View a class-logit tensor (`rows x cols x 1`) as a matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dims[0],
            cols: self.dims[1] * self.dims[2],
            data: self.data.clone(),
        }
    }
}

/// Dense row-major matrix, used for decoder weights and class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ModelError::EmptyExtent([rows, cols, 1]));
        }
        if data.len() != rows * cols {
            return Err(ModelError::LengthMismatch {
                raster: "matrix",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::NonFinite { index, value });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_tensor(self) -> LogitsTensor {
        LogitsTensor {
            kind: TensorKind::ClassLogits,
            dims: [self.rows, self.cols, 1],
            data: self.data,
        }
    }
}

/// Per-pixel class ids in `0..C` or [`IGNORE_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl ClassMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>, catalog: &ClassCatalog) -> Result<Self> {
        check_len("class map", height, width, labels.len())?;
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| !catalog.accepts(l)) {
            return Err(ModelError::OutOfRangeLabel {
                raster: "class map",
                index,
                label,
                class_count: catalog.class_count,
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    /// Re-check against a (possibly narrower) catalog.
    pub fn check_catalog(&self, raster: &'static str, catalog: &ClassCatalog) -> Result<()> {
        match self.labels.iter().enumerate().find(|(_, &l)| !catalog.accepts(l)) {
            Some((index, &label)) => Err(ModelError::OutOfRangeLabel {
                raster,
                index,
                label,
                class_count: catalog.class_count,
            }),
            None => Ok(()),
        }
    }
}

/// Per-pixel confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    scores: Vec<f32>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, scores: Vec<f32>) -> Result<Self> {
        check_len("confidence map", height, width, scores.len())?;
        // NaN fails the range check too.
        if let Some((index, &score)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(ModelError::OutOfRangeScore { index, score });
        }
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }
}

/// Per-pixel validity flag; invalid pixels are excluded from semantic
/// metrics and are the positives of the OOD metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, valid: Vec<bool>) -> Result<Self> {
        check_len("validity mask", height, width, valid.len())?;
        Ok(Self {
            height,
            width,
            valid,
        })
    }

    pub fn all_valid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            valid: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }
}

fn check_len(raster: &'static str, height: usize, width: usize, len: usize) -> Result<()> {
    if len != height * width {
        return Err(ModelError::LengthMismatch {
            raster,
            expected: height * width,
            actual: len,
        });
    }
    Ok(())
}

/// A prediction, its confidence, the ground truth and the validity mask,
/// all checked to share one extent. Only [`validate_pair`] builds one.
#[derive(Debug, Clone)]
pub struct EvalUnit {
    pred: ClassMap,
    conf: ConfidenceMap,
    gt: ClassMap,
    validity: ValidityMask,
}

impl EvalUnit {
    pub fn pred(&self) -> &ClassMap {
        &self.pred
    }

    pub fn conf(&self) -> &ConfidenceMap {
        &self.conf
    }

    pub fn gt(&self) -> &ClassMap {
        &self.gt
    }

    pub fn validity(&self) -> &ValidityMask {
        &self.validity
    }

    pub fn pixel_count(&self) -> usize {
        self.gt.labels.len()
    }
}

impl fmt::Display for EvalUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unit {}x{}", self.gt.height, self.gt.width)
    }
}

/// Check that the four rasters of one image agree. The ground truth fixes
/// the reference extent; mismatches name the offending raster.
pub fn validate_pair(
    pred: ClassMap,
    conf: ConfidenceMap,
    gt: ClassMap,
    validity: Option<ValidityMask>,
    catalog: &ClassCatalog,
) -> Result<EvalUnit> {
    let (h, w) = (gt.height, gt.width);
    let check = |raster: &'static str, rh: usize, rw: usize| {
        if (rh, rw) != (h, w) {
            Err(ModelError::DimensionMismatch {
                raster,
                expected_h: h,
                expected_w: w,
                actual_h: rh,
                actual_w: rw,
            })
        } else {
            Ok(())
        }
    };
    check("prediction", pred.height, pred.width)?;
    check("confidence", conf.height, conf.width)?;
    let validity = validity.unwrap_or_else(|| ValidityMask::all_valid(h, w));
    check("validity", validity.height, validity.width)?;
    pred.check_catalog("prediction", catalog)?;
    if let Some(index) = pred.labels.iter().position(|&l| l == IGNORE_LABEL) {
        return Err(ModelError::IgnoredPrediction { index });
    }
    gt.check_catalog("ground truth", catalog)?;
    Ok(EvalUnit {
        pred,
        conf,
        gt,
        validity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat() -> ClassCatalog {
        ClassCatalog::CITYSCAPES
    }

    fn maps(h: usize, w: usize) -> (ClassMap, ConfidenceMap, ClassMap, ValidityMask) {
        let labels: Vec<u8> = (0..h * w).map(|i| (i % 19) as u8).collect();
        (
            ClassMap::new(h, w, labels.clone(), &cat()).unwrap(),
            ConfidenceMap::new(h, w, vec![0.5; h * w]).unwrap(),
            ClassMap::new(h, w, labels, &cat()).unwrap(),
            ValidityMask::all_valid(h, w),
        )
    }

    #[test]
    fn full_resolution_unit_is_accepted() {
        let (p, c, g, v) = maps(1024, 2048);
        let unit = validate_pair(p, c, g, Some(v), &cat()).unwrap();
        assert_eq!(unit.pixel_count(), 1024 * 2048);
    }

    #[test]
    fn mismatched_prediction_is_named() {
        let (p, c, _, v) = maps(1024, 2048);
        let (_, _, g, _) = maps(512, 1024);
        let err = validate_pair(p, c, g, Some(v), &cat()).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch { raster: "prediction", .. }));
    }

    #[test]
    fn prediction_may_not_be_ignored() {
        let (_, c, g, v) = maps(2, 2);
        let p = ClassMap::new(2, 2, vec![0, 1, 255, 3], &cat()).unwrap();
        let err = validate_pair(p, c, g, Some(v), &cat()).unwrap_err();
        assert_eq!(err, ModelError::IgnoredPrediction { index: 2 });
    }

    #[test]
    fn score_above_one_is_rejected() {
        let err = ConfidenceMap::new(1, 2, vec![0.2, 1.25]).unwrap_err();
        assert_eq!(err, ModelError::OutOfRangeScore { index: 1, score: 1.25 });
        assert!(ConfidenceMap::new(1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn labels_are_checked_against_catalog() {
        let small = ClassCatalog::new(3).unwrap();
        assert!(ClassMap::new(1, 3, vec![0, 2, 255], &small).is_ok());
        let err = ClassMap::new(1, 3, vec![0, 3, 255], &small).unwrap_err();
        assert!(matches!(err, ModelError::OutOfRangeLabel { index: 1, label: 3, .. }));
    }

    #[test]
    fn catalog_bounds() {
        assert!(ClassCatalog::new(1).is_err());
        assert!(ClassCatalog::new(255).is_err());
        assert_eq!(ClassCatalog::new(254).unwrap().class_count(), 254);
    }

    #[test]
    fn tensors_reject_non_finite_and_bad_lengths() {
        assert!(LogitsTensor::new(TensorKind::SegLogits, [1, 1, 2], vec![0.0, f32::INFINITY]).is_err());
        assert!(LogitsTensor::new(TensorKind::SegLogits, [1, 1, 2], vec![0.0]).is_err());
        assert!(LogitsTensor::new(TensorKind::SegLogits, [0, 1, 2], vec![]).is_err());
        let t = LogitsTensor::new(TensorKind::SegLogits, [2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(1, 0, 1), 4.0);
        assert_eq!(t.plane(1), &[3.0, 4.0]);
    }
}
