//! End-to-end pipeline benchmarks: transmitter construction and a small
//! single-copy ensemble run.

use criterion::{criterion_group, criterion_main, Criterion};

use cvqkd_core::harness::{build_transmitter, run_single, PilotKind, RunConfig};

fn small_cfg() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.pilot = PilotKind::Optical;
    cfg.rho_db = 25.0;
    cfg.n_sym = 8192;
    cfg.k_copies = 1;
    cfg.sys.preamble_len = 1024;
    cfg.distance_km = 25.0;
    cfg.linewidth_hz = 200.0;
    cfg.maf_m = 500;
    cfg.n_workers = 1;
    cfg
}

fn bench_transmitter(c: &mut Criterion) {
    let cfg = small_cfg();
    c.bench_function("build_transmitter_8k_symbols", |b| {
        b.iter(|| build_transmitter(&cfg).unwrap())
    });
}

fn bench_single_copy(c: &mut Criterion) {
    let cfg = small_cfg();
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    group.bench_function("run_single_1_copy_8k_symbols", |b| {
        b.iter(|| run_single(&cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_transmitter, bench_single_copy);
criterion_main!(benches);
