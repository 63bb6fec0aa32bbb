//! Thread-pool scaling for the hot paths. Each workload runs once on the
//! default rayon pool and once pinned to a single thread. Build with
//! `--no-default-features` to measure the sequential fallback instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use revex::perturbation::{sample_coalitions, SamplingStrategy};
use revex::pipeline::score_coalitions;
use revex::predictor::Echo;
use revex::segmentation::{grid_3d, slic_3d, SlicParams};
use revex::tensor::gaussian_blur_3d;
use revex::{BlurParams, Dims, VideoTensor};

fn noise(d: Dims) -> VideoTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = (0..d.voxels() * 3).map(|_| rng.random::<f32>()).collect();
    VideoTensor::new(d, 3, data).unwrap()
}

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out = vec![(
        "1-thread".to_string(),
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap(),
    )];
    if n > 1 {
        out.push((
            format!("{n}-threads"),
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap(),
        ));
    }
    out
}

fn bench_blur(c: &mut Criterion) {
    let v = noise(Dims::new(16, 112, 112).unwrap());
    let p = BlurParams::default();
    let mut g = c.benchmark_group("blur_16x112x112");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| gaussian_blur_3d(black_box(&v), &p).unwrap()))
        });
    }
    g.finish();
}

fn bench_coalitions(c: &mut Criterion) {
    let d = Dims::new(8, 56, 56).unwrap();
    let v = noise(d);
    let seg = grid_3d(d, 2, 4, 4).unwrap();
    let zs = sample_coalitions(
        seg.regions(),
        &SamplingStrategy::Bernoulli {
            n_samples: 32,
            p_remove: 0.5,
            seed: 1,
        },
    )
    .unwrap();
    let echo = Echo { class_count: 2 };
    let removal = revex::perturbation::RemovalOperator::default();
    let mut g = c.benchmark_group("score_32_coalitions_8x56x56");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| {
                pool.install(|| {
                    score_coalitions(&v, &echo, &seg, &removal, black_box(&zs), 0, 32).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn bench_slic(c: &mut Criterion) {
    let v = noise(Dims::new(8, 56, 56).unwrap());
    let p = SlicParams::with_segments(100);
    let mut g = c.benchmark_group("slic_8x56x56");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| slic_3d(black_box(&v), &p).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_blur, bench_coalitions, bench_slic);
criterion_main!(benches);
