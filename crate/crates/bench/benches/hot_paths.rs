use std::hint::black_box;

use colortraj::basis::uniform_grid;
use colortraj::signal::{dct_forward, smooth_lowpass, DEFAULT_CUTOFF};
use colortraj::{CoefficientEncoder, CoefficientVector, ComponentBasis, Modality, ProcessCondition, Raster};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signal(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("dct");
    for n in [73, 140, 1024] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..40.0)).collect();
        group.bench_with_input(BenchmarkId::new("forward", n), &x, |b, x| {
            b.iter(|| dct_forward(black_box(x)))
        });
        group.bench_with_input(BenchmarkId::new("smooth", n), &x, |b, x| {
            b.iter(|| smooth_lowpass(black_box(x), DEFAULT_CUTOFF))
        });
    }
    group.finish();
}

fn basis_fit(c: &mut Criterion) {
    let basis = ComponentBasis::default();
    let beta = CoefficientVector([20.0, 5.0, -3.0, 1.0, 0.5, 2.0, -1.0, 0.2, 0.1]);
    for n in [73, 140] {
        let traj = basis.reconstruct(&beta, &uniform_grid(n)).unwrap();
        c.bench_function(&format!("basis_fit/{n}"), |b| {
            b.iter(|| basis.fit_least_squares(black_box(&traj), 0.0))
        });
    }
}

fn encoder_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cond = ProcessCondition::fahrenheit_rpm(385.0, 1000.0);
    let image = Raster::new(32, 32, (0..1024).map(|_| rng.random()).collect());
    for modality in [Modality::TabularOnly, Modality::MultiModal] {
        let enc = CoefficientEncoder::init(modality, &mut rng);
        let img = (modality == Modality::MultiModal).then_some(&image);
        c.bench_function(&format!("encoder_forward/{modality:?}"), |b| {
            b.iter(|| enc.predict_coefficients(black_box(&cond), img))
        });
    }
}

criterion_group!(benches, signal, basis_fit, encoder_forward);
criterion_main!(benches);
