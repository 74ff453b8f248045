//! Brute-force references and synthetic fixtures.
//!
//! The references here deliberately take a different route from the
//! streaming engine: curves come from a full sort with rank sums, mIoU from
//! explicit pixel sets, ECE from a per-pixel scan over bin edges and
//! mask fusion from a direct per-element bilinear formula. They are slow and
//! meant for small instances.
//!
//! Fixtures are generated with ChaCha8 (rand_chacha), seeded with
//! `seed_from_u64(seed)` and one stream per image (`set_stream(index)`),
//! sampled through rand 0.9's integer-range and Bernoulli samplers. The same
//! seed and spec always give byte-identical rasters.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregate::{BenchmarkReport, ReportConfig, Subset, SubsetResult};
use crate::fusion::{dequantize_score, quantize_score};
use crate::io::{self, FusedPaths, Item, Manifest, SubsetEntry};
use crate::metrics::{DegeneratePolicy, OodRecord, SemanticRecord};
use crate::model::{
    validate_pair, ClassCatalog, ClassMap, ConfidenceMap, EvalUnit, LogitsTensor, Matrix, ValidityMask,
    IGNORE_LABEL,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("degenerate curve: {0}")]
    Degenerate(&'static str),
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] io::IoError),
}

/// Sort-based curve metrics, all in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactCurves {
    pub auroc: f64,
    pub fpr95: f64,
    pub ap: f64,
}

/// Groups of equal scores in descending order, as (positives, negatives).
fn tie_groups_desc(scores: &[f64], labels: &[bool]) -> Vec<(u64, u64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for i in idx {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        if labels[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Rank-sum AUROC (ties get mid-ranks), step AP and polyline FPR at 95% TPR.
pub fn exact_curves(scores: &[f64], labels: &[bool]) -> Result<ExactCurves, OracleError> {
    assert_eq!(scores.len(), labels.len());
    let p = labels.iter().filter(|&&l| l).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(OracleError::Degenerate(if p == 0 { "no positives" } else { "no negatives" }));
    }

    // Twice the mid-rank of each ascending tie group is (start + end + 1)
    // for 0-based [start, end), so all arithmetic stays in integers.
    let mut asc: Vec<usize> = (0..scores.len()).collect();
    asc.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0usize;
    while start < asc.len() {
        let mut end = start + 1;
        while end < asc.len() && scores[asc[end]] == scores[asc[start]] {
            end += 1;
        }
        let twice_rank = (start + end + 1) as u128;
        let pos_in_group = asc[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        twice_rank_sum += twice_rank * pos_in_group;
        start = end;
    }
    let twice_u = twice_rank_sum - (p as u128) * (p as u128 + 1);
    let auroc = 100.0 * (twice_u as f64 / (2 * p as u128 * n as u128) as f64);

    let groups = tie_groups_desc(scores, labels);
    let (pf, nf) = (p as f64, n as f64);

    let mut fpr95 = 100.0;
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(gp, gn) in &groups {
        let (tp1, fp1) = (tp + gp, fp + gn);
        let (tpr0, tpr1) = (tp as f64 / pf, tp1 as f64 / pf);
        if tpr1 >= 0.95 {
            let (fpr0, fpr1) = (fp as f64 / nf, fp1 as f64 / nf);
            fpr95 = 100.0 * (fpr0 + (0.95 - tpr0) / (tpr1 - tpr0) * (fpr1 - fpr0));
            break;
        }
        tp = tp1;
        fp = fp1;
    }

    let mut ap = 0.0;
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(gp, gn) in &groups {
        tp += gp;
        fp += gn;
        if gp > 0 {
            ap += (gp as f64 / pf) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ExactCurves {
        auroc,
        fpr95,
        ap: 100.0 * ap,
    })
}

/// mIoU from explicit per-class pixel sets over valid, non-ignored
/// pixels. `None` when nothing is evaluated.
pub fn brute_miou(gt: &ClassMap, pred: &ClassMap, validity: &ValidityMask, classes: usize) -> Option<f64> {
    let mut gt_sets = vec![HashSet::new(); classes];
    let mut pred_sets = vec![HashSet::new(); classes];
    for i in 0..gt.labels().len() {
        let g = gt.labels()[i];
        if g == IGNORE_LABEL || !validity.valid()[i] {
            continue;
        }
        gt_sets[g as usize].insert(i);
        pred_sets[pred.labels()[i] as usize].insert(i);
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let inter = gt_sets[c].intersection(&pred_sets[c]).count();
        let union = gt_sets[c].union(&pred_sets[c]).count();
        if union > 0 {
            sum += inter as f64 / union as f64;
            present += 1;
        }
    }
    (present > 0).then(|| 100.0 * sum / present as f64)
}

/// ECE over 8-bit confidence levels by scanning bin edges per pixel.
pub fn brute_ece(levels: &[u8], correct: &[bool], bins: usize) -> Option<f64> {
    if levels.is_empty() {
        return None;
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0f64; bins];
    let mut hits = vec![0usize; bins];
    for (&q, &ok) in levels.iter().zip(correct) {
        let s = q as f64 / 255.0;
        for b in 0..bins {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let inside = s >= lo && (s < hi || (b == bins - 1 && s <= hi));
            if inside {
                count[b] += 1;
                conf_sum[b] += s;
                hits[b] += ok as usize;
                break;
            }
        }
    }
    let n = levels.len() as f64;
    let mut ece = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let nb = count[b] as f64;
        ece += (nb / n) * (hits[b] as f64 / nb - conf_sum[b] / nb).abs();
    }
    Some(100.0 * ece)
}

/// Direct evaluation of the half-pixel bilinear formula at one output
/// element.
fn sample_bilinear(t: &LogitsTensor, c: usize, y: usize, x: usize, out_h: usize, out_w: usize) -> f64 {
    let coord = |d: usize, src: usize, dst: usize| {
        let s = ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(src - 1), s - i0 as f64)
    };
    let (y0, y1, fy) = coord(y, t.height(), out_h);
    let (x0, x1, fx) = coord(x, t.width(), out_w);
    let v = |yy, xx| t.get(c, yy, xx) as f64;
    v(y0, x0) * (1.0 - fy) * (1.0 - fx) + v(y0, x1) * (1.0 - fy) * fx + v(y1, x0) * fy * (1.0 - fx) + v(y1, x1) * fy * fx
}

/// Mask fusion by an explicit triple loop over pixels, classes and masks.
/// Returns labels and unclamped maximum scores.
pub fn brute_mask_fuse(mask_logits: &LogitsTensor, class_logits: &Matrix, out_h: usize, out_w: usize) -> (Vec<u8>, Vec<f64>) {
    let masks = mask_logits.channels();
    let classes = class_logits.cols() - 1;
    let mut labels = Vec::with_capacity(out_h * out_w);
    let mut best = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            let mut top = (0usize, f64::NEG_INFINITY);
            for c in 0..classes {
                let mut score = 0.0;
                for n in 0..masks {
                    let m = sample_bilinear(mask_logits, n, y, x, out_h, out_w);
                    let pm = 1.0 / (1.0 + (-m).exp());
                    let row = class_logits.row(n);
                    let z: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
                    let pc = (row[c] as f64).exp() / z;
                    score += pm * pc;
                }
                if score > top.1 {
                    top = (c, score);
                }
            }
            labels.push(top.0 as u8);
            best.push(top.1);
        }
    }
    (labels, best)
}

/// Linear-decoder fusion without max subtraction or row streaming.
pub fn brute_linear_fuse(seg_logits: &LogitsTensor, out_h: usize, out_w: usize) -> (Vec<u8>, Vec<f64>) {
    let classes = seg_logits.channels();
    let mut labels = Vec::with_capacity(out_h * out_w);
    let mut best = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            let logits: Vec<f64> = (0..classes)
                .map(|c| sample_bilinear(seg_logits, c, y, x, out_h, out_w))
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let mut top = (0usize, f64::NEG_INFINITY);
            for (c, l) in logits.iter().enumerate() {
                let p = l.exp() / z;
                if p > top.1 {
                    top = (c, p);
                }
            }
            labels.push(top.0 as u8);
            best.push(top.1);
        }
    }
    (labels, best)
}

/// Pixel lists pooled over several images, in the form the references
/// take.
#[derive(Debug, Clone, Default)]
pub struct PooledPixels {
    pub gt: Vec<u8>,
    pub pred: Vec<u8>,
    pub valid: Vec<bool>,
    pub levels: Vec<u8>,
}

impl PooledPixels {
    /// Pool the non-ignored pixels of every unit.
    pub fn from_units<'a>(units: impl IntoIterator<Item = &'a EvalUnit>) -> Self {
        let mut p = PooledPixels::default();
        for u in units {
            for i in 0..u.pixel_count() {
                let g = u.gt().labels()[i];
                if g == IGNORE_LABEL {
                    continue;
                }
                p.gt.push(g);
                p.pred.push(u.pred().labels()[i]);
                p.valid.push(u.validity().valid()[i]);
                p.levels.push(quantize_score(u.conf().scores()[i]));
            }
        }
        p
    }

    fn valid_pixels(&self) -> (Vec<u8>, Vec<bool>) {
        let mut levels = Vec::new();
        let mut correct = Vec::new();
        for i in 0..self.gt.len() {
            if self.valid[i] {
                levels.push(self.levels[i]);
                correct.push(self.gt[i] == self.pred[i]);
            }
        }
        (levels, correct)
    }
}

fn resolve(r: Result<f64, OracleError>, policy: DegeneratePolicy) -> Option<f64> {
    match (r, policy) {
        (Ok(v), _) => Some(v),
        (Err(_), DegeneratePolicy::Error) => None,
        (Err(_), DegeneratePolicy::Zero) => Some(0.0),
        (Err(_), DegeneratePolicy::One) => Some(100.0),
    }
}

fn pick(
    curves: &Result<ExactCurves, OracleError>,
    field: fn(&ExactCurves) -> f64,
    policy: DegeneratePolicy,
) -> Option<f64> {
    match curves {
        Ok(c) => Some(field(c)),
        Err(_) => resolve(Err(OracleError::Degenerate("degenerate")), policy),
    }
}

/// Step AP alone, defined whenever there is at least one positive.
fn exact_ap(scores: &[f64], labels: &[bool]) -> Result<f64, OracleError> {
    let p = labels.iter().filter(|&&l| l).count();
    if p == 0 {
        return Err(OracleError::Degenerate("no positives"));
    }
    if p == labels.len() {
        return Ok(100.0);
    }
    exact_curves(scores, labels).map(|c| c.ap)
}

/// Semantic record from the references; `None` when no valid pixel
/// exists.
pub fn oracle_semantic(pixels: &PooledPixels, classes: usize, bins: usize, policy: DegeneratePolicy) -> Option<SemanticRecord> {
    let n = pixels.gt.len();
    let cat = ClassCatalog::new(classes).ok()?;
    let miou = brute_miou(
        &ClassMap::new(1, n.max(1), if n == 0 { vec![IGNORE_LABEL] } else { pixels.gt.clone() }, &cat).ok()?,
        &ClassMap::new(1, n.max(1), if n == 0 { vec![0] } else { pixels.pred.clone() }, &cat).ok()?,
        &ValidityMask::new(1, n.max(1), if n == 0 { vec![false] } else { pixels.valid.clone() }).ok()?,
        classes,
    )?;
    let (levels, correct) = pixels.valid_pixels();
    let ece = brute_ece(&levels, &correct, bins)?;
    let conf: Vec<f64> = levels.iter().map(|&q| q as f64 / 255.0).collect();
    let reversed: Vec<f64> = conf.iter().map(|c| 1.0 - c).collect();
    let wrong: Vec<bool> = correct.iter().map(|c| !c).collect();
    let curves = exact_curves(&conf, &correct);
    Some(SemanticRecord {
        miou,
        ece,
        auroc: pick(&curves, |c| c.auroc, policy),
        fpr95: pick(&curves, |c| c.fpr95, policy),
        aupr_success: resolve(exact_ap(&conf, &correct), policy),
        aupr_error: resolve(exact_ap(&reversed, &wrong), policy),
    })
}

/// OOD record from the references; `None` when there are no pixels.
pub fn oracle_ood(pixels: &PooledPixels, policy: DegeneratePolicy) -> Option<OodRecord> {
    if pixels.gt.is_empty() {
        return None;
    }
    let reversed: Vec<f64> = pixels.levels.iter().map(|&q| 1.0 - q as f64 / 255.0).collect();
    let invalid: Vec<bool> = pixels.valid.iter().map(|v| !v).collect();
    let curves = exact_curves(&reversed, &invalid);
    Some(OodRecord {
        auprc: resolve(exact_ap(&reversed, &invalid), policy),
        auroc: pick(&curves, |c| c.auroc, policy),
        fpr95: pick(&curves, |c| c.fpr95, policy),
    })
}

/// Full report computed from the references over a fixture.
pub fn oracle_report(fixture: &Fixture, bins: usize, policy: DegeneratePolicy) -> BenchmarkReport {
    let units: Vec<EvalUnit> = (0..fixture.images.len()).map(|i| fixture.unit(i)).collect();
    let mut results = Vec::new();
    for &subset in &fixture.spec.subsets {
        let members: Vec<&EvalUnit> = units
            .iter()
            .zip(&fixture.images)
            .filter(|(_, img)| img.subset == subset)
            .map(|(u, _)| u)
            .collect();
        let pixels = PooledPixels::from_units(members.iter().copied());
        let semantic = subset
            .has_semantic()
            .then(|| oracle_semantic(&pixels, fixture.spec.class_count, bins, policy))
            .flatten();
        let ood = subset.has_ood().then(|| oracle_ood(&pixels, policy)).flatten();
        results.push(SubsetResult {
            subset,
            items: members.len(),
            semantic,
            ood,
            notes: Vec::new(),
        });
    }
    BenchmarkReport::assemble(ReportConfig::new(bins, policy), results)
}

/// How fixture confidences are drawn for valid pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceProfile {
    /// Levels uniform on a range with mean `1 - error_rate`; each pixel is
    /// correct with probability equal to its own confidence.
    Calibrated,
    /// Every pixel has this confidence; correctness is Bernoulli(1 - e).
    Constant(f64),
    /// Levels uniform on `[lo, hi]`; correctness is Bernoulli(1 - e).
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub class_count: usize,
    pub height: usize,
    pub width: usize,
    pub subsets: Vec<Subset>,
    pub images_per_subset: usize,
    pub error_rate: f64,
    pub confidence: ConfidenceProfile,
    pub invalid_fraction: f64,
    /// Confidence range for invalid pixels; `None` uses the valid profile.
    pub invalid_confidence: Option<(f64, f64)>,
    pub ignore_fraction: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            class_count: 19,
            height: 64,
            width: 128,
            subsets: Subset::ALL.to_vec(),
            images_per_subset: 1,
            error_rate: 0.2,
            confidence: ConfidenceProfile::Calibrated,
            invalid_fraction: 0.05,
            invalid_confidence: None,
            ignore_fraction: 0.0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<(), OracleError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(OracleError::InvalidSpec(format!("{name} = {p} is not a probability in [0, 1]")))
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<(), OracleError> {
    check_prob(&format!("{name} lower bound"), lo)?;
    check_prob(&format!("{name} upper bound"), hi)?;
    if lo > hi {
        return Err(OracleError::InvalidSpec(format!("{name}: lower bound {lo} exceeds upper bound {hi}")));
    }
    Ok(())
}

/// Inclusive 8-bit level range for `[lo, hi]`.
fn level_range(lo: f64, hi: f64) -> (u8, u8) {
    let a = (lo * 255.0).ceil() as u8;
    let b = (hi * 255.0).floor() as u8;
    if a <= b {
        (a, b)
    } else {
        let q = quantize_score(((lo + hi) / 2.0) as f32);
        (q, q)
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        ClassCatalog::new(self.class_count).map_err(|e| OracleError::InvalidSpec(e.to_string()))?;
        if self.height == 0 || self.width == 0 {
            return Err(OracleError::InvalidSpec("image extents must be positive".into()));
        }
        if self.images_per_subset == 0 || self.subsets.is_empty() {
            return Err(OracleError::InvalidSpec("fixture needs at least one image".into()));
        }
        check_prob("error rate", self.error_rate)?;
        check_prob("invalid fraction", self.invalid_fraction)?;
        check_prob("ignore fraction", self.ignore_fraction)?;
        match self.confidence {
            ConfidenceProfile::Calibrated => {}
            ConfidenceProfile::Constant(v) => check_prob("constant confidence", v)?,
            ConfidenceProfile::Uniform { lo, hi } => check_range("confidence", (lo, hi))?,
        }
        if let Some(r) = self.invalid_confidence {
            check_range("invalid confidence", r)?;
        }
        Ok(())
    }

    /// Level range of valid-pixel confidences.
    fn valid_levels(&self) -> (u8, u8) {
        match self.confidence {
            ConfidenceProfile::Calibrated => {
                let e = self.error_rate;
                let (lo, hi) = if e <= 0.5 { (1.0 - 2.0 * e, 1.0) } else { (0.0, 2.0 - 2.0 * e) };
                (quantize_score(lo as f32), quantize_score(hi as f32))
            }
            ConfidenceProfile::Constant(v) => {
                let q = quantize_score(v as f32);
                (q, q)
            }
            ConfidenceProfile::Uniform { lo, hi } => level_range(lo, hi),
        }
    }
}

/// Targets that follow from the planted parameters (up to sampling noise
/// where noted).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpectedMetrics {
    /// Exact: 100 when nothing is planted wrong.
    pub miou: Option<f64>,
    /// Expected value; sampling noise shrinks with pixel count.
    pub ece: Option<f64>,
    /// Exact when invalid and valid confidence supports are disjoint.
    pub ood_auroc: Option<f64>,
    pub ood_fpr95: Option<f64>,
    pub ood_auprc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureImage {
    pub subset: Subset,
    pub id: String,
    pub gt: Vec<u8>,
    pub pred: Vec<u8>,
    pub conf: Vec<u8>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub seed: u64,
    pub spec: FixtureSpec,
    pub images: Vec<FixtureImage>,
    pub expected: ExpectedMetrics,
}

impl Fixture {
    pub fn catalog(&self) -> ClassCatalog {
        ClassCatalog::new(self.spec.class_count).expect("validated")
    }

    pub fn unit(&self, index: usize) -> EvalUnit {
        let img = &self.images[index];
        let (h, w) = (self.spec.height, self.spec.width);
        let cat = self.catalog();
        validate_pair(
            ClassMap::new(h, w, img.pred.clone(), &cat).expect("fixture labels"),
            ConfidenceMap::new(h, w, img.conf.iter().map(|&q| dequantize_score(q)).collect()).expect("fixture scores"),
            ClassMap::new(h, w, img.gt.clone(), &cat).expect("fixture labels"),
            Some(ValidityMask::new(h, w, img.valid.clone()).expect("fixture mask")),
            &cat,
        )
        .expect("fixture rasters agree")
    }
}

fn synth_image(spec: &FixtureSpec, seed: u64, stream: u64, subset: Subset, id: String) -> FixtureImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = spec.height * spec.width;
    let classes = spec.class_count as u8;
    let (vlo, vhi) = spec.valid_levels();
    let invalid_levels = spec.invalid_confidence.map(|(lo, hi)| level_range(lo, hi));
    let mut img = FixtureImage {
        subset,
        id,
        gt: Vec::with_capacity(n),
        pred: Vec::with_capacity(n),
        conf: Vec::with_capacity(n),
        valid: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let gt = rng.random_range(0..classes);
        let ignored = spec.ignore_fraction > 0.0 && rng.random_bool(spec.ignore_fraction);
        let valid = !(spec.invalid_fraction > 0.0 && rng.random_bool(spec.invalid_fraction));
        let (lo, hi) = match (valid, invalid_levels) {
            (false, Some(r)) => r,
            _ => (vlo, vhi),
        };
        let level = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let p_correct = match spec.confidence {
            ConfidenceProfile::Calibrated => level as f64 / 255.0,
            _ => 1.0 - spec.error_rate,
        };
        let correct = rng.random_bool(p_correct);
        let pred = if correct {
            gt
        } else {
            (gt + 1 + rng.random_range(0..classes - 1)) % classes
        };
        img.gt.push(if ignored { IGNORE_LABEL } else { gt });
        img.pred.push(pred);
        img.conf.push(level);
        img.valid.push(valid);
    }
    img
}

fn image_ids(spec: &FixtureSpec) -> impl Iterator<Item = (u64, Subset, String)> + '_ {
    spec.subsets
        .iter()
        .flat_map(move |&subset| (0..spec.images_per_subset).map(move |i| (subset, format!("{subset}_{i:04}"))))
        .enumerate()
        .map(|(k, (subset, id))| (k as u64, subset, id))
}

impl FixtureSpec {
    /// Targets implied by the planted parameters.
    pub fn expected(&self) -> ExpectedMetrics {
        let e = self.error_rate;
        let mut expected = ExpectedMetrics {
            miou: (e == 0.0).then_some(100.0),
            ece: match self.confidence {
                ConfidenceProfile::Calibrated => Some(0.0),
                ConfidenceProfile::Constant(v) => {
                    let q = quantize_score(v as f32) as f64 / 255.0;
                    Some(100.0 * (q - (1.0 - e)).abs())
                }
                ConfidenceProfile::Uniform { .. } => None,
            },
            ..ExpectedMetrics::default()
        };
        if let Some((_, invalid_hi)) = self.invalid_confidence.map(|(lo, hi)| level_range(lo, hi)) {
            let separable = self.invalid_fraction > 0.0 && self.invalid_fraction < 1.0;
            if separable && invalid_hi < self.valid_levels().0 {
                expected.ood_auroc = Some(100.0);
                expected.ood_fpr95 = Some(0.0);
                expected.ood_auprc = Some(100.0);
            }
        }
        expected
    }
}

/// Generate a fixture. Image `k` (in subset-major order) draws from
/// ChaCha8 stream `k` of `seed`.
pub fn synth_fixture(spec: &FixtureSpec, seed: u64) -> Result<Fixture, OracleError> {
    spec.validate()?;
    let images = image_ids(spec)
        .map(|(stream, subset, id)| synth_image(spec, seed, stream, subset, id))
        .collect();
    Ok(Fixture {
        seed,
        spec: spec.clone(),
        images,
        expected: spec.expected(),
    })
}

fn write_image(img: &FixtureImage, dir: &Path, h: usize, w: usize) -> Result<Item, OracleError> {
    let sub = dir.join(img.subset.key());
    let gt = sub.join(format!("{}_gt.png", img.id));
    let pred = sub.join(format!("{}_pred.png", img.id));
    let conf = sub.join(format!("{}_conf.png", img.id));
    let valid = sub.join(format!("{}_valid.png", img.id));
    io::write_gray8(&gt, h, w, &img.gt)?;
    io::write_gray8(&pred, h, w, &img.pred)?;
    io::write_gray8(&conf, h, w, &img.conf)?;
    let mask: Vec<u8> = img.valid.iter().map(|&v| if v { 255 } else { 0 }).collect();
    io::write_gray8(&valid, h, w, &mask)?;
    Ok(Item {
        id: img.id.clone(),
        gt,
        validity: Some(valid),
        fused: Some(FusedPaths {
            prediction: pred,
            confidence: conf,
        }),
        logits: None,
        target: None,
    })
}

fn push_item(entries: &mut Vec<SubsetEntry>, subset: Subset, item: Item) {
    match entries.last_mut() {
        Some(e) if e.subset == subset => e.items.push(item),
        _ => entries.push(SubsetEntry {
            subset,
            items: vec![item],
        }),
    }
}

fn write_manifest(catalog: ClassCatalog, entries: Vec<SubsetEntry>, dir: &Path) -> Result<PathBuf, OracleError> {
    let path = dir.join("manifest.json");
    Manifest {
        catalog,
        subsets: entries,
    }
    .write(&path)?;
    Ok(path)
}

/// Write every image as PNG rasters under `dir/<subset>/` plus a
/// `manifest.json` listing them as fused predictions. Returns the manifest
/// path.
pub fn write_fixture(fixture: &Fixture, dir: &Path) -> Result<PathBuf, OracleError> {
    let (h, w) = (fixture.spec.height, fixture.spec.width);
    let mut entries = Vec::new();
    for img in &fixture.images {
        push_item(&mut entries, img.subset, write_image(img, dir, h, w)?);
    }
    write_manifest(fixture.catalog(), entries, dir)
}

/// Same files as `write_fixture(&synth_fixture(spec, seed)?, dir)`, but
/// holds only one image in memory at a time.
pub fn synth_to_disk(spec: &FixtureSpec, seed: u64, dir: &Path) -> Result<PathBuf, OracleError> {
    spec.validate()?;
    let mut entries = Vec::new();
    for (stream, subset, id) in image_ids(spec) {
        let img = synth_image(spec, seed, stream, subset, id);
        push_item(&mut entries, subset, write_image(&img, dir, spec.height, spec.width)?);
    }
    let catalog = ClassCatalog::new(spec.class_count).map_err(|e| OracleError::InvalidSpec(e.to_string()))?;
    write_manifest(catalog, entries, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_curves_examples() {
        let r = exact_curves(&[0.9, 0.4, 0.6, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auroc, 75.0);
        let r = exact_curves(&[0.9, 0.8, 0.2], &[true, true, false]).unwrap();
        assert_eq!((r.auroc, r.fpr95, r.ap), (100.0, 0.0, 100.0));
        let r = exact_curves(&[0.5; 5], &[true, true, false, false, false]).unwrap();
        assert_eq!(r.auroc, 50.0);
        assert!((r.fpr95 - 95.0).abs() < 1e-12);
        assert!((r.ap - 40.0).abs() < 1e-12);
        assert!(matches!(exact_curves(&[0.5], &[true]), Err(OracleError::Degenerate(_))));
    }

    #[test]
    fn brute_miou_examples() {
        let cat = ClassCatalog::new(2).unwrap();
        let gt = ClassMap::new(2, 2, vec![0, 0, 1, 1], &cat).unwrap();
        let pred = ClassMap::new(2, 2, vec![0, 1, 1, 1], &cat).unwrap();
        let all = ValidityMask::all_valid(2, 2);
        let m = brute_miou(&gt, &pred, &all, 2).unwrap();
        assert!((m - 100.0 * (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(brute_miou(&gt, &gt, &all, 2), Some(100.0));
        let none = ValidityMask::new(2, 2, vec![false; 4]).unwrap();
        assert_eq!(brute_miou(&gt, &pred, &none, 2), None);
    }

    #[test]
    fn brute_ece_examples() {
        assert!((brute_ece(&[204, 204], &[true, false], 2).unwrap() - 30.0).abs() < 1e-12);
        assert_eq!(brute_ece(&[255; 3], &[true; 3], 15), Some(0.0));
        assert_eq!(brute_ece(&[], &[], 15), None);
    }

    #[test]
    fn fixtures_are_reproducible() {
        let spec = FixtureSpec {
            height: 16,
            width: 16,
            subsets: vec![Subset::Acdc, Subset::Synobjs],
            images_per_subset: 2,
            ..FixtureSpec::default()
        };
        let a = synth_fixture(&spec, 7).unwrap();
        let b = synth_fixture(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_fixture(&spec, 8).unwrap();
        assert_ne!(a.images[0].conf, c.images[0].conf);
        assert_ne!(a.images[0].gt, a.images[1].gt);
    }

    #[test]
    fn streaming_writer_matches_in_memory_writer() {
        let spec = FixtureSpec {
            height: 6,
            width: 10,
            subsets: vec![Subset::Smiyc, Subset::Synrain],
            images_per_subset: 2,
            ..FixtureSpec::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_fixture(&synth_fixture(&spec, 5).unwrap(), a.path()).unwrap();
        synth_to_disk(&spec, 5, b.path()).unwrap();
        for rel in ["manifest.json", "smiyc/smiyc_0001_conf.png", "synrain/synrain_0000_valid.png"] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = FixtureSpec {
            error_rate: 1.5,
            ..FixtureSpec::default()
        };
        assert!(matches!(synth_fixture(&bad, 0), Err(OracleError::InvalidSpec(_))));
        let bad = FixtureSpec {
            invalid_confidence: Some((0.5, 0.2)),
            ..FixtureSpec::default()
        };
        assert!(synth_fixture(&bad, 0).is_err());
    }

    #[test]
    fn perfect_fixture_expectations() {
        let spec = FixtureSpec {
            error_rate: 0.0,
            confidence: ConfidenceProfile::Constant(1.0),
            height: 8,
            width: 8,
            ..FixtureSpec::default()
        };
        let f = synth_fixture(&spec, 1).unwrap();
        assert_eq!(f.expected.miou, Some(100.0));
        assert_eq!(f.expected.ece, Some(0.0));
        for img in &f.images {
            assert_eq!(img.gt, img.pred);
            assert!(img.conf.iter().all(|&q| q == 255));
        }
    }
}
