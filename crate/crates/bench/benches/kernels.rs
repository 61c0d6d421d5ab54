use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use heatsdf::heat::heat_loss;
use heatsdf::oracle::{GridOperator, SampleMode};
use heatsdf::orientation::build_region_mask;
use heatsdf::sampling::{sample_surface, sample_volume, stream_rng};
use heatsdf::surface::marching_cubes;
use heatsdf::{AnalyticShape, Architecture, NeuralField, PointCloud};

fn sphere_cloud(n: usize) -> PointCloud {
    AnalyticShape::sphere().sample(n, SampleMode::Uniform, 0).unwrap()
}

fn field_evaluation(c: &mut Criterion) {
    let net = NeuralField::init_siren(Architecture::new(64, 2), 0).unwrap();
    let points = sample_volume(&mut stream_rng(0, 0), 2000).points;
    c.bench_function("field value+gradient, 2×64, 2000 points", |b| {
        b.iter(|| net.eval_with_gradient_batch(black_box(&points)))
    });
}

fn heat_batch(c: &mut Criterion) {
    let net = NeuralField::init_siren(Architecture::new(64, 2), 0).unwrap();
    let pc = sphere_cloud(5000).with_adaptive_weights(12).unwrap();
    let mut rng = stream_rng(1, 0);
    let vol = sample_volume(&mut rng, 2000);
    let surf = sample_surface(&pc, &mut rng, 2000);
    c.bench_function("heat loss and gradient, 2×64, 2000+2000 samples", |b| {
        b.iter(|| heat_loss(black_box(&net), &vol, &surf, 0.005))
    });
}

fn adaptive_weights(c: &mut Criterion) {
    let pc = sphere_cloud(20_000);
    c.bench_function("adaptive weights, 20k points, k = 12", |b| {
        b.iter(|| black_box(&pc).with_adaptive_weights(12).unwrap())
    });
}

fn region_mask(c: &mut Criterion) {
    let pc = sphere_cloud(20_000);
    c.bench_function("region mask, 64³ cells, 20k points", |b| {
        b.iter(|| build_region_mask(black_box(&pc.points), 64).unwrap())
    });
}

fn grid_operator(c: &mut Criterion) {
    let op = GridOperator::new(64, 0.005).unwrap();
    let u: Vec<f64> = (0..64 * 64 * 64).map(|i| (i as f64 * 1e-3).sin()).collect();
    c.bench_function("grid operator apply, 64³ nodes", |b| {
        b.iter_batched_ref(
            || vec![0.0; u.len()],
            |out| op.apply(black_box(&u), out),
            BatchSize::LargeInput,
        )
    });
}

fn extraction(c: &mut Criterion) {
    let torus = AnalyticShape::torus();
    c.bench_function("marching cubes, analytic torus, 128³", |b| {
        b.iter(|| marching_cubes(black_box(&torus), 128, 0.0).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = field_evaluation, heat_batch, adaptive_weights, region_mask, grid_operator, extraction
}
criterion_main!(kernels);
