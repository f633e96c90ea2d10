//! Forward pass, training step and whole-cloud encoding, on one worker and on
//! all cores. Build with `--no-default-features` to time the sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use voxelcodec::codec::encode_cloud;
use voxelcodec::geometry::synth::{block, corpus, plane_points, Shape};
use voxelcodec::geometry::PointCloud;
use voxelcodec::model::{VoxelDnn, VoxelDnnConfig};
use voxelcodec::par;
use voxelcodec::partition::{CodecOptions, ModelSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn thread_counts() -> Vec<usize> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    if par::is_parallel() && all > 1 {
        vec![1, all]
    } else {
        vec![1]
    }
}

fn desk(side: usize) -> VoxelDnn {
    VoxelDnn::new(VoxelDnnConfig::desk(side), 1).unwrap()
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    g.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for side in [8, 16, 32] {
        let net = desk(side);
        let b = block(Shape::TiltedPlane, side, &mut rng);
        for t in thread_counts() {
            g.bench_with_input(BenchmarkId::new(format!("d{side}"), format!("{t}t")), &t, |bench, &t| {
                bench.iter(|| par::with_threads(t, || black_box(net.predict_block(&b).unwrap())))
            });
        }
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss_and_grads");
    g.sample_size(10);
    let net = desk(16);
    let data = corpus(Shape::TiltedPlane, 16, 8, 2);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::new("d16_batch8", format!("{t}t")), &t, |bench, &t| {
            bench.iter(|| {
                par::with_threads(t, || {
                    black_box(par::map_slice(&data, |b| net.loss_and_grads(b).unwrap()))
                })
            })
        });
    }
    g.finish();
}

fn encode(c: &mut Criterion) {
    let mut g = c.benchmark_group("encode");
    g.sample_size(10);
    let models = ModelSet::new().with(desk(8)).with(desk(16));
    let pts = plane_points([0; 3], [128; 3], [0.3, -0.2, 1.0], [64.0; 3]);
    let pc = PointCloud::new(pts, 7).unwrap();
    let opts = CodecOptions {
        max_lv: 4,
        extension: true,
        single_model: false,
    };
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::new("plane128", format!("{t}t")), &t, |bench, &t| {
            bench.iter(|| par::with_threads(t, || black_box(encode_cloud(&pc, &models, opts).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, forward, gradients, encode);
criterion_main!(benches);
