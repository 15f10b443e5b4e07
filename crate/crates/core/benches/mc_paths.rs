//! Throughput of the path-simulation core: rayon data-parallel dispatch
//! against the plain sequential fallback on the identical per-path workload,
//! plus the end-to-end estimator and the ODE solve.
//!
//! Run with `cargo bench -p regime-eq-core`.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use regime_eq_core::*;

fn fixtures() -> (MarketParams, Preferences, RegimeChain) {
    (
        MarketParams::new([0.05, 0.01], [0.15, 0.25], [0.25, 0.6]).unwrap(),
        Preferences::new(2.0, 3.0).unwrap(),
        RegimeChain::new(1.0, 1.0).unwrap(),
    )
}

/// One full path simulation: sample the regime chain, then Euler the wealth
/// SDE over [0, 10] at the given step.
fn path_workload(
    k: u64,
    strategy: &StrategySpec,
    market: &MarketParams,
    chain: &RegimeChain,
    dt: f64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    rng.set_stream(k);
    let path = sample_regime_path(Regime::Bull, 0.0, 10.0, chain, &mut rng).unwrap();
    let config = SimConfig {
        n_paths: 1,
        dt,
        seed: k,
        t0: 0.0,
        x0: 1.0,
        i0: Regime::Bull,
    };
    simulate_wealth(&path, strategy, &config, market).unwrap()
}

fn bench_path_batches(c: &mut Criterion) {
    let (market, _prefs, chain) = fixtures();
    let strategy = StrategySpec::constant_fraction([0.6, 0.3]).unwrap();
    let n_paths = 512;
    let dt = 0.01;

    let mut group = c.benchmark_group("terminal_wealth_batch");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| {
            black_box(map_paths_sequential(n_paths, |k| {
                path_workload(k, &strategy, &market, &chain, dt)
            }))
        })
    });
    group.bench_function("parallel", |b| {
        b.iter(|| {
            black_box(map_paths(n_paths, |k| {
                path_workload(k, &strategy, &market, &chain, dt)
            }))
        })
    });
    group.finish();
}

fn bench_estimator(c: &mut Criterion) {
    let (market, prefs, chain) = fixtures();
    let sol = Arc::new(solve_g(&market, &prefs, &chain, 10.0, 0.0, 1e-10).unwrap());
    let strategy = StrategySpec::equilibrium(sol);
    let sim = SimConfig {
        n_paths: 512,
        dt: 0.01,
        seed: 11,
        t0: 0.0,
        x0: 1.0,
        i0: Regime::Bull,
    };
    let mut group = c.benchmark_group("estimate_objective");
    group.sample_size(10);
    group.bench_function("equilibrium_512_paths", |b| {
        b.iter(|| {
            black_box(estimate_objective(&strategy, &sim, &market, &prefs, &chain, 10.0).unwrap())
        })
    });
    group.finish();
}

fn bench_solver(c: &mut Criterion) {
    let (market, prefs, chain) = fixtures();
    c.bench_function("solve_g_default_tolerance", |b| {
        b.iter(|| black_box(solve_g(&market, &prefs, &chain, 10.0, 0.0, 1e-10).unwrap()))
    });
}

criterion_group!(benches, bench_path_batches, bench_estimator, bench_solver);
criterion_main!(benches);
