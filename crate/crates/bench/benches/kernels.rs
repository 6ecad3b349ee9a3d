use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use onebit_bench::desk_config;
use onebit_core::mi::{default_grid, rate_mrc};
use onebit_core::mimo::simulate_frame;
use onebit_core::siso::{optimize_pilots, rate_qpsk};
use onebit_core::{ConstellationKind, PsiEvaluator};

fn psi(c: &mut Criterion) {
    let mut group = c.benchmark_group("psi");
    for rho in [0.01, 1.0, 1e4] {
        group.bench_with_input(BenchmarkId::new("direct", rho), &rho, |b, &rho| {
            // fresh evaluator each time so the memo is not hit
            b.iter(|| {
                PsiEvaluator::new(rho)
                    .unwrap()
                    .psi(black_box(37), black_box(463))
            })
        });
    }
    group.bench_function("table_1000", |b| {
        b.iter(|| PsiEvaluator::with_table(black_box(10.0), 1000).unwrap())
    });
    group.finish();
}

fn siso(c: &mut Criterion) {
    let mut group = c.benchmark_group("siso");
    group.sample_size(20);
    for t in [10usize, 100, 1000] {
        group.bench_with_input(BenchmarkId::new("rate_qpsk", t), &t, |b, &t| {
            b.iter(|| rate_qpsk(black_box(10.0), t).unwrap())
        });
    }
    group.bench_function("optimize_pilots_200", |b| {
        b.iter(|| optimize_pilots(black_box(10.0), 200).unwrap())
    });
    group.finish();
}

fn uplink(c: &mut Criterion) {
    let mut group = c.benchmark_group("uplink");
    for users in [1usize, 4, 20] {
        let cfg = desk_config(users, ConstellationKind::Qam16);
        group.bench_with_input(BenchmarkId::new("simulate_frame", users), &cfg, |b, cfg| {
            let mut f = 0;
            b.iter(|| {
                f += 1;
                simulate_frame(cfg, f).unwrap()
            })
        });
    }
    let mut cfg = desk_config(1, ConstellationKind::Qpsk);
    cfg.frames = 32;
    let grid = default_grid(&cfg).unwrap();
    group.sample_size(10);
    group.bench_function("rate_mrc_32_frames", |b| {
        b.iter(|| rate_mrc(black_box(&cfg), &grid).unwrap())
    });
    group.finish();
}

criterion_group!(benches, psi, siso, uplink);
criterion_main!(benches);
