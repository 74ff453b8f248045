//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bravo_core::aggregate::{bravo_index, parse_report, Subset};
use bravo_core::fusion::{dequantize_score, mask2former_fuse, quantize_confidence};
use bravo_core::io::{
    read_class_map, read_confidence_map, read_gray8, read_tensor, write_class_map, write_confidence_map,
    write_gray8, write_tensor,
};
use bravo_core::metrics::{ece, ood_metrics, semantic_metrics, AccumulatorSet, DegeneratePolicy};
use bravo_core::model::{
    validate_pair, ClassCatalog, ClassMap, ConfidenceMap, LogitsTensor, Matrix, TensorKind, ValidityMask,
};
use bravo_core::oracle::{
    brute_mask_fuse, oracle_ood, oracle_semantic, synth_fixture, synth_to_disk, ConfidenceProfile, FixtureSpec,
    PooledPixels,
};

const TABLE_TOLERANCE: f64 = 0.15;

const ORACLE_INSTANCES: usize = 200;
const ORACLE_MAX_PIXELS: usize = 100_000;
const ORACLE_MAX_CLASSES: usize = 19;
const ORACLE_RELATIVE_TOLERANCE: f64 = 1e-12;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);

const FUSION_INSTANCES: usize = 50;
const FUSION_MAX_MASKS: usize = 8;
const FUSION_MAX_CLASSES: usize = 5;
const FUSION_TOLERANCE: f64 = 1e-5;
const FUSION_BUDGET: Duration = Duration::from_secs(10);

const CALIBRATED_ECE_MAX: f64 = 0.3;
const PLANTED_ECE: f64 = 30.0;
const PLANTED_ECE_TOLERANCE: f64 = 0.2;
const CALIBRATION_BUDGET: Duration = Duration::from_secs(20);

const DETERMINISM_IMAGES_PER_SUBSET: usize = 10;
const DETERMINISM_WORKERS: [usize; 3] = [1, 4, 8];

const THROUGHPUT_IMAGES_PER_SUBSET: usize = 25;
const THROUGHPUT_HEIGHT: usize = 1024;
const THROUGHPUT_WIDTH: usize = 2048;
const THROUGHPUT_BUDGET: Duration = Duration::from_secs(60);
const THROUGHPUT_WORKERS: usize = 8;
const THROUGHPUT_SPEEDUP: f64 = 3.0;

const ROUND_TRIP_CASES: usize = 1000;

/// Semantic, OOD and BRAVO columns of the published ranking table.
const RANKING_TABLE: [(f64, f64, f64); 18] = [
    (69.8, 88.1, 77.9),
    (70.8, 84.8, 77.2),
    (70.0, 83.4, 76.1),
    (70.5, 81.4, 75.5),
    (69.1, 70.6, 69.9),
    (57.1, 83.5, 67.8),
    (49.7, 92.1, 64.5),
    (69.4, 58.5, 63.5),
    (58.7, 64.0, 61.2),
    (64.3, 58.2, 61.1),
    (67.3, 53.9, 59.9),
    (46.1, 83.5, 59.4),
    (62.8, 47.6, 54.1),
    (40.4, 79.1, 53.5),
    (45.3, 49.2, 47.1),
    (51.5, 40.5, 45.3),
    (27.7, 59.2, 37.7),
    (66.3, 22.5, 33.6),
];

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> Result<(), String> {
    if elapsed < budget {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, budget {budget:?}"))
    }
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bravo-eval"));
    c.env_remove("BRAVO_WORKERS").env("BRAVO_LOG", "warn");
    c
}

/// Run `eval` and return the report bytes and wall time.
fn cli_eval(manifest: &Path, out: &Path, workers: usize) -> Result<(Vec<u8>, Duration), String> {
    let start = Instant::now();
    let status = bin()
        .args(["eval", "--manifest"])
        .arg(manifest)
        .arg("--out")
        .arg(out)
        .args(["--workers", &workers.to_string()])
        .status()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if !status.success() {
        return Err(format!("eval with {workers} workers exited with {status}"));
    }
    Ok((std::fs::read(out).map_err(|e| e.to_string())?, elapsed))
}

fn ranking_table() -> Verdict {
    let mut worst: f64 = 0.0;
    for (i, &(semantic, ood, published)) in RANKING_TABLE.iter().enumerate() {
        let got = bravo_index(semantic, ood).map_err(|e| e.to_string())?;
        let diff = (got - published).abs();
        worst = worst.max(diff);
        if diff > TABLE_TOLERANCE {
            return Err(format!("row {}: ({semantic}, {ood}) -> {got:.3}, published {published}", i + 1));
        }
    }
    let anchors = [(69.8, 88.1, 77.9), (70.8, 84.8, 77.2), (70.0, 83.4, 76.1), (49.7, 92.1, 64.5)];
    for (s, o, b) in anchors {
        let got = bravo_index(s, o).map_err(|e| e.to_string())?;
        if (got - b).abs() > TABLE_TOLERANCE {
            return Err(format!("anchor ({s}, {o}) -> {got:.3}, expected {b}"));
        }
    }
    Ok(format!("18 rows, max deviation {worst:.3} (tolerance {TABLE_TOLERANCE})"))
}

fn relative_close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= ORACLE_RELATIVE_TOLERANCE * 1f64.max(a.abs()).max(b.abs()),
        (None, None) => true,
        _ => false,
    }
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = DegeneratePolicy::Error;
    let mut compared = 0usize;
    for instance in 0..ORACLE_INSTANCES {
        let classes = rng.random_range(2..=ORACLE_MAX_CLASSES);
        let n = rng.random_range(1..=ORACLE_MAX_PIXELS);
        let cat = ClassCatalog::new(classes).unwrap();
        let accuracy = rng.random_range(0.3..0.95);
        let (mut gt, mut pred, mut conf, mut valid) = (vec![], vec![], vec![], vec![]);
        for _ in 0..n {
            let g = rng.random_range(0..classes as u8);
            let hit = rng.random_bool(accuracy);
            let level: u8 = if hit { rng.random_range(80..=255) } else { rng.random_range(0..=230) };
            gt.push(if rng.random_bool(0.05) { 255 } else { g });
            pred.push(if hit { g } else { rng.random_range(0..classes as u8) });
            conf.push(dequantize_score(level));
            valid.push(rng.random_bool(0.9));
        }
        let unit = validate_pair(
            ClassMap::new(1, n, pred, &cat).unwrap(),
            ConfidenceMap::new(1, n, conf).unwrap(),
            ClassMap::new(1, n, gt, &cat).unwrap(),
            Some(ValidityMask::new(1, n, valid).unwrap()),
            &cat,
        )
        .unwrap();
        let mut acc = AccumulatorSet::new(classes, 15);
        acc.accumulate(&unit);
        let pooled = PooledPixels::from_units([&unit]);

        let engine = semantic_metrics(&acc, policy).ok();
        let reference = oracle_semantic(&pooled, classes, 15, policy);
        let (Some(e), Some(r)) = (&engine, &reference) else {
            if engine.is_some() != reference.is_some() {
                return Err(format!("instance {instance}: semantic definedness differs"));
            }
            continue;
        };
        for ((name, a), (_, b)) in e.columns().iter().zip(r.columns()) {
            if !relative_close(*a, b) {
                return Err(format!("instance {instance}: {name} engine {a:?} vs reference {b:?}"));
            }
            compared += 1;
        }
        let e = ood_metrics(&acc, policy).ok();
        let r = oracle_ood(&pooled, policy);
        if let (Some(e), Some(r)) = (&e, &r) {
            for ((name, a), (_, b)) in e.columns().iter().zip(r.columns()) {
                if !relative_close(*a, b) {
                    return Err(format!("instance {instance}: ood {name} engine {a:?} vs reference {b:?}"));
                }
                compared += 1;
            }
        } else if e.is_some() != r.is_some() {
            return Err(format!("instance {instance}: ood definedness differs"));
        }
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, ORACLE_BUDGET)?;
    Ok(format!(
        "{ORACLE_INSTANCES} instances, {compared} values within {ORACLE_RELATIVE_TOLERANCE:e} relative, {elapsed:.2?}"
    ))
}

fn fusion_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for instance in 0..FUSION_INSTANCES {
        let masks = rng.random_range(1..=FUSION_MAX_MASKS);
        let classes = rng.random_range(2..=FUSION_MAX_CLASSES);
        let m = LogitsTensor::new(
            TensorKind::MaskLogits,
            [masks, 16, 16],
            (0..masks * 256).map(|_| rng.random_range(-6.0..6.0)).collect(),
        )
        .unwrap();
        let cl = Matrix::new(masks, classes + 1, (0..masks * (classes + 1)).map(|_| rng.random_range(-4.0..4.0)).collect())
            .unwrap();
        let fused = mask2former_fuse(&m, &cl, 64, 64).map_err(|e| e.to_string())?;
        let (labels, best) = brute_mask_fuse(&m, &cl, 64, 64);
        if labels != fused.classes.labels() {
            return Err(format!("instance {instance}: labels differ"));
        }
        for (a, b) in fused.confidence.scores().iter().zip(&best) {
            worst = worst.max((*a as f64 - b.min(1.0)).abs());
        }
        if worst > FUSION_TOLERANCE {
            return Err(format!("instance {instance}: confidence deviates by {worst:e}"));
        }
    }
    let m = LogitsTensor::new(TensorKind::MaskLogits, [1, 16, 16], vec![0.0; 256]).unwrap();
    let cl = Matrix::new(1, 3, vec![1.5; 3]).unwrap();
    let uniform = mask2former_fuse(&m, &cl, 64, 64).map_err(|e| e.to_string())?;
    let sixth = (1.0f64 / 6.0) as f32;
    if let Some(v) = uniform.confidence.scores().iter().find(|&&v| v != sixth) {
        return Err(format!("uniform single mask gave {v}, expected 1/6"));
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, FUSION_BUDGET)?;
    Ok(format!(
        "{FUSION_INSTANCES} instances, max deviation {worst:.2e} (tolerance {FUSION_TOLERANCE:e}), uniform case 1/6, {elapsed:.2?}"
    ))
}

fn fixture_ece(spec: &FixtureSpec, seed: u64) -> f64 {
    let f = synth_fixture(spec, seed).unwrap();
    let mut acc = AccumulatorSet::new(spec.class_count, 15);
    for i in 0..f.images.len() {
        acc.accumulate(&f.unit(i));
    }
    ece(&acc.calibration).unwrap()
}

fn calibration_fixtures() -> Verdict {
    let start = Instant::now();
    let base = FixtureSpec {
        height: 1000,
        width: 1000,
        subsets: vec![Subset::Acdc],
        images_per_subset: 1,
        invalid_fraction: 0.0,
        ..FixtureSpec::default()
    };
    let calibrated = fixture_ece(
        &FixtureSpec {
            error_rate: 0.2,
            confidence: ConfidenceProfile::Calibrated,
            ..base.clone()
        },
        4,
    );
    let planted = fixture_ece(
        &FixtureSpec {
            error_rate: 0.5,
            confidence: ConfidenceProfile::Constant(0.8),
            ..base
        },
        4,
    );
    let elapsed = start.elapsed();
    let detail = format!("calibrated ECE {calibrated:.4}, planted ECE {planted:.4}, {elapsed:.2?}");
    within_budget(elapsed, CALIBRATION_BUDGET).map_err(|e| format!("{detail}; {e}"))?;
    check(
        calibrated <= CALIBRATED_ECE_MAX && (planted - PLANTED_ECE).abs() <= PLANTED_ECE_TOLERANCE,
        detail,
    )
}

fn ood_separation() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = FixtureSpec {
        height: 128,
        width: 256,
        subsets: vec![Subset::Smiyc, Subset::Synobjs],
        images_per_subset: 2,
        error_rate: 0.2,
        confidence: ConfidenceProfile::Uniform { lo: 0.8, hi: 1.0 },
        invalid_fraction: 0.1,
        invalid_confidence: Some((0.0, 0.2)),
        ..FixtureSpec::default()
    };
    let manifest = synth_to_disk(&spec, 5, dir.path()).map_err(|e| e.to_string())?;
    let (bytes, _) = cli_eval(&manifest, &dir.path().join("report.json"), 1)?;
    let report = parse_report(std::str::from_utf8(&bytes).unwrap()).map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for subset in [Subset::Smiyc, Subset::Synobjs] {
        let ood = report.subset(subset).and_then(|s| s.ood.clone()).ok_or("missing ood record")?;
        seen.push(format!("{subset}: {:?}/{:?}/{:?}", ood.auroc, ood.fpr95, ood.auprc));
        if ood.auroc != Some(100.0) || ood.fpr95 != Some(0.0) || ood.auprc != Some(100.0) {
            return Err(seen.join("; "));
        }
    }
    Ok(format!("AUROC/FPR@95/AUPRC exact: {}", seen.join("; ")))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = FixtureSpec {
        images_per_subset: DETERMINISM_IMAGES_PER_SUBSET,
        ..FixtureSpec::default()
    };
    let manifest = synth_to_disk(&spec, 6, dir.path()).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for w in DETERMINISM_WORKERS {
        reports.push(cli_eval(&manifest, &dir.path().join(format!("report_{w}.json")), w)?.0);
    }
    check(
        reports.windows(2).all(|p| p[0] == p[1]),
        format!(
            "{} images, workers {:?}, report {} bytes",
            6 * DETERMINISM_IMAGES_PER_SUBSET,
            DETERMINISM_WORKERS,
            reports[0].len()
        ),
    )
}

struct ThroughputRun {
    single: Duration,
    single_report: Vec<u8>,
    dir: tempfile::TempDir,
    manifest: PathBuf,
}

fn throughput_fixture() -> Result<ThroughputRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = FixtureSpec {
        height: THROUGHPUT_HEIGHT,
        width: THROUGHPUT_WIDTH,
        subsets: vec![Subset::Acdc, Subset::Smiyc, Subset::Synobjs, Subset::Synrain],
        images_per_subset: THROUGHPUT_IMAGES_PER_SUBSET,
        ..FixtureSpec::default()
    };
    let manifest = synth_to_disk(&spec, 7, dir.path()).map_err(|e| e.to_string())?;
    let (single_report, single) = cli_eval(&manifest, &dir.path().join("report_1.json"), 1)?;
    Ok(ThroughputRun {
        single,
        single_report,
        dir,
        manifest,
    })
}

fn throughput_single(run: &Result<ThroughputRun, String>) -> Verdict {
    let run = run.as_ref().map_err(Clone::clone)?;
    let detail = format!(
        "{} images of {THROUGHPUT_HEIGHT}x{THROUGHPUT_WIDTH}, 1 worker: {:.2?} (budget {THROUGHPUT_BUDGET:?})",
        4 * THROUGHPUT_IMAGES_PER_SUBSET,
        run.single
    );
    check(run.single < THROUGHPUT_BUDGET, detail)
}

fn throughput_speedup(run: &Result<ThroughputRun, String>) -> Verdict {
    let run = run.as_ref().map_err(Clone::clone)?;
    let out = run.dir.path().join(format!("report_{THROUGHPUT_WORKERS}.json"));
    let (report, elapsed) = cli_eval(&run.manifest, &out, THROUGHPUT_WORKERS)?;
    let speedup = run.single.as_secs_f64() / elapsed.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let identical = report == run.single_report;
    check(
        speedup >= THROUGHPUT_SPEEDUP && identical,
        format!(
            "{THROUGHPUT_WORKERS} workers: {elapsed:.2?}, speedup {speedup:.2}x (need {THROUGHPUT_SPEEDUP}x), \
             {cores} hardware thread(s), reports identical: {identical}"
        ),
    )
}

fn random_finite(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng.random());
        if v.is_finite() {
            return v;
        }
    }
}

fn round_trips() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bits = |t: &LogitsTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    for case in 0..ROUND_TRIP_CASES {
        let fail = |what: &str| format!("case {case}: {what} differs after round trip");

        let kind = [TensorKind::SegLogits, TensorKind::MaskLogits, TensorKind::Features, TensorKind::ClassLogits]
            [rng.random_range(0..4)];
        let dims = match kind {
            TensorKind::ClassLogits => [rng.random_range(1..=16), rng.random_range(2..=20), 1],
            _ => [rng.random_range(1..=6), rng.random_range(1..=12), rng.random_range(1..=12)],
        };
        let data = (0..dims.iter().product::<usize>()).map(|_| random_finite(&mut rng)).collect();
        let t = LogitsTensor::new(kind, dims, data).unwrap();
        let path = dir.path().join(format!("t{case}.bten"));
        write_tensor(&t, &path).map_err(|e| e.to_string())?;
        let back = read_tensor(&path, kind).map_err(|e| e.to_string())?;
        if back.dims() != t.dims() || bits(&back) != bits(&t) {
            return Err(fail("tensor"));
        }

        let (h, w) = (rng.random_range(1..=48), rng.random_range(1..=48));
        let px: Vec<u8> = (0..h * w).map(|_| rng.random()).collect();
        let raw = dir.path().join(format!("g{case}.png"));
        write_gray8(&raw, h, w, &px).map_err(|e| e.to_string())?;
        if read_gray8(&raw).map_err(|e| e.to_string())? != (h, w, px.clone()) {
            return Err(fail("8-bit raster"));
        }

        let cat = ClassCatalog::CITYSCAPES;
        let labels: Vec<u8> = px.iter().map(|&v| if v > 240 { 255 } else { v % 19 }).collect();
        let map = ClassMap::new(h, w, labels, &cat).unwrap();
        let cls = dir.path().join(format!("c{case}.png"));
        write_class_map(&cls, &map).map_err(|e| e.to_string())?;
        if read_class_map(&cls, &cat).map_err(|e| e.to_string())? != map {
            return Err(fail("class map"));
        }

        let conf = ConfidenceMap::new(h, w, px.iter().map(|&q| dequantize_score(q)).collect()).unwrap();
        let cf = dir.path().join(format!("f{case}.png"));
        write_confidence_map(&cf, &conf).map_err(|e| e.to_string())?;
        let back = read_confidence_map(&cf).map_err(|e| e.to_string())?;
        if quantize_confidence(&back) != px || back != conf {
            return Err(fail("confidence map"));
        }
    }
    Ok(format!("{ROUND_TRIP_CASES} cases, tensors and 8-bit maps bit-exact"))
}

fn report(id: &str, name: &str, verdict: impl FnOnce() -> Verdict) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(verdict)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id:<2} {tag}  {name}: {detail}");
    outcome.is_ok()
}

fn main() {
    let mut all = true;
    all &= report("1", "ranking-table aggregation", ranking_table);
    all &= report("2", "streaming metrics equal references", oracle_equivalence);
    all &= report("3", "mask fusion equals triple loop", fusion_equivalence);
    all &= report("4", "calibration fixtures", calibration_fixtures);
    all &= report("5", "OOD separation fixture", ood_separation);
    all &= report("6", "worker-count determinism", determinism);
    let throughput = throughput_fixture();
    all &= report("7a", "single-worker throughput", || throughput_single(&throughput));
    all &= report("7b", "parallel speedup", || throughput_speedup(&throughput));
    all &= report("8", "format round trips", round_trips);
    if !all {
        std::process::exit(1);
    }
}
