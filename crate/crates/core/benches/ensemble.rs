//! Ensemble throughput: rayon fan-out over quadrature nodes against a plain
//! sequential loop over the same nodes. Build with `--no-default-features`
//! to see the sequential fallback in the first group as well.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use singlet_core::config::RunConfig;
use singlet_core::parallel::{is_parallel, try_par_map};
use singlet_core::protocol::{run_ensemble, EnsembleSpec, Schedule};
use singlet_core::scheme::SchemeParams;

fn workload() -> (SchemeParams, Schedule, EnsembleSpec) {
    let overrides: Vec<String> = [
        "model.mode3=3",
        "model.channels=\"-mode4\"",
        "continuous.duration=\"1 ms\"",
        "continuous.window_start=\"0.5 ms\"",
        "continuous.window_end=\"1 ms\"",
        "ensemble.r_mean=0.005",
    ]
    .map(String::from)
    .to_vec();
    let cfg = RunConfig::preset("continuous_fig2", &overrides).unwrap();
    (cfg.to_params().unwrap(), cfg.schedule().unwrap(), cfg.ensemble())
}

fn ensemble(c: &mut Criterion) {
    let (params, schedule, spec) = workload();
    let points = spec.points(false).unwrap();
    let mut g = c.benchmark_group("ensemble_7_nodes");
    g.sample_size(10);

    let label = if is_parallel() { "rayon" } else { "fallback" };
    g.bench_function(label, |b| b.iter(|| black_box(run_ensemble(&params, &schedule, &spec).unwrap())));

    g.bench_function("sequential_loop", |b| {
        b.iter(|| {
            let runs: Vec<_> = points
                .iter()
                .map(|&(r, w)| (w, schedule.run(&SchemeParams { r, ..params.clone() }).unwrap()))
                .collect();
            black_box(runs)
        })
    });
    g.finish();
}

fn fan_out(c: &mut Criterion) {
    let items: Vec<u64> = (0..64).collect();
    let work = |&x: &u64| -> singlet_core::Result<f64> { Ok((0..20_000u64).map(|k| ((k ^ x) as f64).sqrt()).sum()) };
    let mut g = c.benchmark_group("fan_out_64");
    g.bench_function(if is_parallel() { "rayon" } else { "fallback" }, |b| {
        b.iter(|| black_box(try_par_map(&items, work).unwrap()))
    });
    g.bench_function("sequential_loop", |b| {
        b.iter(|| black_box(items.iter().map(work).collect::<singlet_core::Result<Vec<_>>>().unwrap()))
    });
    g.finish();
}

criterion_group!(benches, ensemble, fan_out);
criterion_main!(benches);
