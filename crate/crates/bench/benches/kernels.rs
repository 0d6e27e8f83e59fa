use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dfd_bench::{fixture, random_vertices, sample_set, translated_handles};
use dfd_core::deform::{pose_rest, RestPose};
use dfd_core::{bind, fibonacci_cameras, rasterize, train_field, Aabb, BlendMode, TrainConfig};

fn bind_bench(c: &mut Criterion) {
    let fx = fixture(200_000, 18);
    let n = fx.features.len();
    let mut g = c.benchmark_group("bind_100k");
    for k in [1usize, 10, 100] {
        let hs = random_vertices(n, k, k as u64);
        g.throughput(Throughput::Elements((n * k) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(k), &hs, |b, hs| {
            b.iter(|| black_box(bind(&fx.features, hs).unwrap()))
        });
    }
    g.finish();
}

fn pose_bench(c: &mut Criterion) {
    let fx = fixture(200_000, 18);
    let n = fx.mesh.vertex_count();
    let rest = RestPose::new(&fx.mesh.vertices);
    let hv = random_vertices(n, 10, 3);
    let w = bind(&fx.features, &hv).unwrap();
    let hs = translated_handles(&hv, 4);
    let mut g = c.benchmark_group("pose_100k_k10");
    g.throughput(Throughput::Elements(n as u64));
    for mode in [BlendMode::Displacement, BlendMode::Literal, BlendMode::Pou] {
        g.bench_function(mode.to_string(), |b| {
            b.iter(|| black_box(pose_rest(&rest, &w, &hs, mode).unwrap()))
        });
    }
    g.finish();
}

fn raster_bench(c: &mut Criterion) {
    let fx = fixture(50_000, 4);
    let cam = fibonacci_cameras(1, &fx.mesh, 512).unwrap()[0];
    c.bench_function("rasterize_50k_512", |b| b.iter(|| black_box(rasterize(&fx.mesh, &cam))));
}

fn field_bench(c: &mut Criterion) {
    let fx = fixture(2_000, 64);
    let pts: Vec<[f32; 3]> = sample_set(10_000, 1, 5).points;
    let mut g = c.benchmark_group("field");
    g.throughput(Throughput::Elements(pts.len() as u64));
    g.bench_function("eval_10k_points", |b| b.iter(|| black_box(fx.field.eval(&pts))));
    let set = sample_set(16_384, 64, 6);
    let bounds = Aabb {
        min: [-1.0; 3],
        max: [1.0; 3],
    };
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16_384,
        ..TrainConfig::default()
    };
    g.throughput(Throughput::Elements(set.len() as u64));
    g.bench_function("fit_one_batch_16k", |b| b.iter(|| black_box(train_field(&set, &bounds, &cfg).unwrap())));
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(3));
    targets = bind_bench, pose_bench, raster_bench, field_bench
}
criterion_main!(benches);
