//! Sequential versus rayon execution for the two parallel hot paths:
//! responder-forest fitting and a small simulation grid.

use card_core::exec::{rng_from_seed, Exec};
use card_core::simulation::{generate_rct, run_experiment, Method, MethodSettings, ScenarioConfig, SigmaMode};
use card_core::{fit_responder_forest, split_knockoffs, with_workers, ResponderForestParams, ResponderSample};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> Vec<(&'static str, usize)> {
    vec![("sequential", 1), ("parallel", 0)]
}

fn forest_fit(c: &mut Criterion) {
    let cfg = ScenarioConfig::rct(1000, 10, 0.0, SigmaMode::Heteroscedastic, 1);
    let mut rng = rng_from_seed(1);
    let (d, _) = generate_rct(&cfg, &mut rng);
    let split = split_knockoffs(&d, 0.2, &mut rng).unwrap();
    let sample = ResponderSample::from_split(&d, &split);
    let params = ResponderForestParams::default();
    let mut group = c.benchmark_group("responder_forest_n1000");
    group.sample_size(10);
    for (name, workers) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_workers(workers, |exec: Exec| fit_responder_forest(&sample, &params, 7, exec).unwrap()))
        });
    }
    group.finish();
}

fn simulation_grid(c: &mut Criterion) {
    let grid: Vec<ScenarioConfig> = [SigmaMode::Homoscedastic, SigmaMode::Heteroscedastic]
        .into_iter()
        .map(|sigma| ScenarioConfig {
            reps: 4,
            ..ScenarioConfig::rct(500, 10, 0.0, sigma, 1)
        })
        .collect();
    let settings = MethodSettings {
        scorer: ResponderForestParams {
            n_trees: 30,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut group = c.benchmark_group("run_experiment_2x4");
    group.sample_size(10);
    for (name, workers) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_workers(workers, |exec| run_experiment(&grid, &[Method::Card], &settings, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, forest_fit, simulation_grid);
criterion_main!(benches);
