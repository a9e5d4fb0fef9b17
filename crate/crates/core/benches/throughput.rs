//! Parallel-vs-sequential throughput of the heavy kernels.
//!
//! Each kernel runs once under a single-worker pool and once under the
//! ambient machine-wide pool, so the data-parallel speedup is visible
//! directly in the report.  With the `parallel` feature disabled both
//! entries collapse to the same sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mfg_core::congestion::SpeedField;
use mfg_core::equilibrium::{best_response, initial_bundles};
use mfg_core::ocp::{solve_value_function, SolverParams};
use mfg_core::par;
use mfg_core::scenario::{Scenario, ScenarioConfig};
use mfg_core::trajectory::TrajectoryBundle;

/// Two congested populations swapping sides; large enough that the value
/// sweep, density build, and tracing all dominate their setup costs.
const SCENARIO: &str = r#"{
  "seed": 9,
  "speed": { "k_min": 0.2, "k_max": 1.0, "a_self": 1.0, "a_cross": 3.0, "sigma": 0.1 },
  "grid": { "lo": [-1.2, -0.5], "hi": [1.2, 0.5], "h": 0.05, "dt": 0.05, "t_max": 8.0 },
  "populations": [
    { "target": [ { "ball": { "center": [0.75, 0.0], "radius": 0.15 } } ],
      "initial": { "sampler": "gaussian", "center": [-0.75, 0.0], "std": 0.12, "count": 150 } },
    { "target": [ { "ball": { "center": [-0.75, 0.0], "radius": 0.15 } } ],
      "initial": { "sampler": "gaussian", "center": [0.75, 0.0], "std": 0.12, "count": 150 } }
  ]
}"#;

struct Fixture {
    scenario: Scenario,
    /// One best-response round past the stationary start, so densities
    /// move and tracing has real work to do.
    bundles: Vec<TrajectoryBundle>,
    field: SpeedField,
    solver: SolverParams,
}

fn fixture() -> Fixture {
    let scenario = Scenario::build(ScenarioConfig::from_json_str(SCENARIO).unwrap()).unwrap();
    let solver = SolverParams::default();
    let stationary = initial_bundles(&scenario).unwrap();
    let field0 =
        SpeedField::from_bundles(&stationary, &scenario.config.speed, &scenario.grid).unwrap();
    let bundles: Vec<_> = (0..scenario.n_populations())
        .map(|pop| best_response(&scenario, &field0, pop, &solver).unwrap().0)
        .collect();
    let field = SpeedField::from_bundles(&bundles, &scenario.config.speed, &scenario.grid).unwrap();
    Fixture { scenario, bundles, field, solver }
}

const POOLS: [(&str, Option<usize>); 2] = [("1_thread", Some(1)), ("all_threads", None)];

fn bench_value_sweep(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("value_sweep");
    group.sample_size(10);
    for (label, workers) in POOLS {
        group.bench_with_input(BenchmarkId::from_parameter(label), &workers, |b, &w| {
            b.iter(|| {
                par::with_workers(w, || {
                    solve_value_function(
                        &fx.scenario.grid,
                        &fx.scenario.targets[0],
                        &fx.field.population(0),
                        &fx.solver,
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_density_field(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("density_field");
    group.sample_size(10);
    for (label, workers) in POOLS {
        group.bench_with_input(BenchmarkId::from_parameter(label), &workers, |b, &w| {
            b.iter(|| {
                par::with_workers(w, || {
                    SpeedField::from_bundles(
                        &fx.bundles,
                        &fx.scenario.config.speed,
                        &fx.scenario.grid,
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_best_response(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("best_response");
    group.sample_size(10);
    for (label, workers) in POOLS {
        group.bench_with_input(BenchmarkId::from_parameter(label), &workers, |b, &w| {
            b.iter(|| {
                par::with_workers(w, || {
                    best_response(&fx.scenario, &fx.field, 0, &fx.solver).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_value_sweep, bench_density_field, bench_best_response);
criterion_main!(benches);
