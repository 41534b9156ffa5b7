use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use replaylab_core::design::{optimal_design_numeric, optimal_design_power_law};
use replaylab_core::sgd_lab::{run_sync, SyncRunConfig, SyntheticObjective};
use replaylab_core::{compute_ratio, ComputeParams, NoiseProfile};

fn design(c: &mut Criterion) {
    c.bench_function("compute_ratio", |b| {
        let p = ComputeParams::new(6, 2, 5.28).unwrap();
        b.iter(|| compute_ratio(black_box(&p)))
    });
    c.bench_function("optimal_design_power_law", |b| {
        b.iter(|| optimal_design_power_law(black_box(0.3), black_box(6.0), black_box(0.1)).unwrap())
    });
    let power = NoiseProfile::PowerLaw {
        alpha: 0.3,
        tau: 1.0,
    };
    c.bench_function("optimal_design_numeric/power_law", |b| {
        b.iter(|| optimal_design_numeric(black_box(&power), 6.0, 0.1).unwrap())
    });
    let tabulated = NoiseProfile::integral_matched_power_law(0.3, 1.0, 4096);
    c.bench_function("optimal_design_numeric/tabulated", |b| {
        b.iter(|| optimal_design_numeric(black_box(&tabulated), 6.0, 0.1).unwrap())
    });
}

fn sync_sgd(c: &mut Criterion) {
    let config = SyncRunConfig {
        n: 8,
        r: 4,
        b: 8,
        eta: 0.1,
        steps: 200,
        objective: SyntheticObjective::Quadratic {
            smoothness: 1.0,
            dim: 32,
        },
        profile: NoiseProfile::PowerLaw {
            alpha: 0.3,
            tau: 1.0,
        },
        kappa: 0.0,
        rho_knob: 0.1,
        theta0_radius: 10.0,
        seed: 1,
    };
    c.bench_function("run_sync/200_steps", |b| {
        b.iter(|| run_sync(black_box(&config)).unwrap())
    });
}

criterion_group!(benches, design, sync_sgd);
criterion_main!(benches);
