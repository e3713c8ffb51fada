use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use std::hint::black_box;

use conecraft::density::{terminal_histogram, HistogramGrid};
use conecraft::rng::{seed_stream, StreamKey};
use conecraft::simulate::{simulate_path, Scaling, Stepper};
use conecraft::skorokhod::{reflection_matrix, Projector};
use conecraft::PolyhedralCone;
use conecraft_bench::{projection_points, reference_model, skew_orthant, variable_model};

fn projection(c: &mut Criterion) {
    let cone = skew_orthant();
    let matrix = reflection_matrix(&cone);
    let points = projection_points(1024);
    let mut group = c.benchmark_group("project_step");
    group.throughput(Throughput::Elements(points.len() as u64));
    group.bench_function("skew_orthant", |b| {
        let mut projector = Projector::new(&cone, &matrix);
        let mut alpha = [0.0; 2];
        b.iter(|| {
            for p in &points {
                let mut z = *p;
                projector.project(&mut z, &mut alpha).unwrap();
                black_box(z);
            }
        })
    });
    group.finish();
}

fn stepping(c: &mut Criterion) {
    let cone = PolyhedralCone::orthant(2);
    let matrix = reflection_matrix(&cone);
    let mut group = c.benchmark_group("euler_steps");
    group.throughput(Throughput::Elements(10_000));
    for (name, model) in [("constant", reference_model(0.3)), ("variable", variable_model(0.3))] {
        group.bench_function(name, |b| {
            let mut stepper = Stepper::new(&cone, &matrix, &model, Scaling::original(&model)).unwrap();
            let mut rng = seed_stream(1, 0);
            let mut dw = [0.0; 2];
            let mut alpha = [0.0; 2];
            b.iter(|| {
                let mut z = [0.3, 0.2];
                for _ in 0..10_000 {
                    conecraft::rng::fill_normal(&mut rng, 0.03, &mut dw);
                    stepper.step(&mut z, &dw, 1e-3, &mut alpha).unwrap();
                }
                black_box(z)
            })
        });
    }
    group.finish();

    c.bench_function("simulate_path_1e4_steps", |b| {
        let model = reference_model(0.3);
        b.iter_batched(
            || seed_stream(2, 0),
            |mut rng| simulate_path(&cone, &model, &[0.3, 0.2], 10.0, 1e-3, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn histogram(c: &mut Criterion) {
    let cone = PolyhedralCone::orthant(2);
    let model = reference_model(0.5);
    let grid = HistogramGrid::around_ball(&[0.5, 0.5], 0.3, 20).unwrap();
    let mut group = c.benchmark_group("terminal_histogram");
    group.sample_size(10);
    group.throughput(Throughput::Elements(4096));
    group.bench_function("4096_replicas_t1_dt1e-2", |b| {
        b.iter(|| terminal_histogram(&cone, &model, &[0.5, 0.5], 1.0, 1e-2, 4096, &grid, StreamKey::new(3)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, projection, stepping, histogram);
criterion_main!(benches);
