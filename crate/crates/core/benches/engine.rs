use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use bravo_core::fusion::mask2former_fuse;
use bravo_core::io;
use bravo_core::metrics::{AccumulatorSet, DEFAULT_ECE_BINS};
use bravo_core::model::{LogitsTensor, Matrix, TensorKind};
use bravo_core::oracle::{synth_fixture, write_fixture, FixtureSpec};
use bravo_core::par;
use bravo_core::pipeline::{evaluate, EvalOptions};

fn spec() -> FixtureSpec {
    FixtureSpec {
        height: 256,
        width: 512,
        images_per_subset: 2,
        ..FixtureSpec::default()
    }
}

fn worker_counts() -> Vec<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts = vec![1];
    if par::PARALLEL {
        counts.extend([2, 4, 8].into_iter().filter(|&w| w <= cores.max(2)));
    }
    counts
}

fn accumulate(c: &mut Criterion) {
    let fixture = synth_fixture(&spec(), 1).unwrap();
    let units: Vec<_> = (0..fixture.images.len()).map(|i| fixture.unit(i)).collect();
    let pixels = units.iter().map(|u| u.pixel_count() as u64).sum();

    let mut group = c.benchmark_group("accumulate");
    group.throughput(Throughput::Elements(pixels));
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| {
                let parts = par::map_ordered(&units, w, |u| {
                    let mut acc = AccumulatorSet::new(19, DEFAULT_ECE_BINS);
                    acc.accumulate(u);
                    acc
                });
                let mut it = parts.into_iter();
                let first = it.next().unwrap();
                black_box(it.fold(first, |a, p| a.merged(&p).unwrap()))
            })
        });
    }
    group.finish();
}

fn evaluate_from_disk(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let fixture = synth_fixture(&spec(), 2).unwrap();
    let manifest = io::load_manifest(&write_fixture(&fixture, dir.path()).unwrap()).unwrap();

    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            let opts = EvalOptions {
                workers: w,
                ..EvalOptions::default()
            };
            b.iter(|| black_box(evaluate(&manifest, &opts).unwrap()))
        });
    }
    group.finish();
}

fn fuse(c: &mut Criterion) {
    let masks = 100;
    let classes = 19;
    let m = LogitsTensor::new(
        TensorKind::MaskLogits,
        [masks, 32, 64],
        (0..masks * 32 * 64).map(|i| ((i * 7919) % 97) as f32 / 10.0 - 4.8).collect(),
    )
    .unwrap();
    let cl = Matrix::new(
        masks,
        classes + 1,
        (0..masks * (classes + 1)).map(|i| ((i * 31) % 13) as f32 - 6.0).collect(),
    )
    .unwrap();
    let mut group = c.benchmark_group("mask2former_fuse");
    group.sample_size(10);
    group.throughput(Throughput::Elements(128 * 256));
    group.bench_function("100x32x64_to_128x256", |b| {
        b.iter(|| black_box(mask2former_fuse(&m, &cl, 128, 256).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, accumulate, evaluate_from_disk, fuse);
criterion_main!(benches);
