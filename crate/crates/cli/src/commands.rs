//! Sub-command implementations: scenario loading, artifact layout, and
//! the verification gate.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use mfg_core::congestion::SpeedField;
use mfg_core::defaults::EQUILIBRIUM_GAP_TOL;
use mfg_core::diagnostics::{self, CheckResult, DiagnosticsConfig};
use mfg_core::equilibrium::{self, IterationMode, IterationParams, ResidualReport};
use mfg_core::export;
use mfg_core::ocp::SolverParams;
use mfg_core::par;
use mfg_core::scenario::{Scenario, ScenarioConfig};
use mfg_core::trajectory::TrajectoryBundle;

use crate::manifest::{sha256_hex, ArtifactDir, IterationSettings, RunManifest, SolverSettings};
use crate::{CommonArgs, EquilibriumArgs, Failure, Mode, SolveArgs, VerifyArgs};

fn solver_params(common: &CommonArgs) -> SolverParams {
    let mut params = SolverParams::default();
    if let Some(m) = common.directions {
        params.directions = m;
    }
    params
}

/// Reads and builds the scenario, applying the seed override; returns it
/// with the content hash of the file as read.
fn load_scenario(common: &CommonArgs) -> Result<(Scenario, String), Failure> {
    let text = fs::read_to_string(&common.scenario).map_err(|e| {
        Failure::new(2, format!("cannot read scenario {}: {e}", common.scenario.display()))
    })?;
    let hash = sha256_hex(text.as_bytes());
    let mut config = ScenarioConfig::from_json_str(&text)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let scenario = Scenario::build(config)?;
    Ok((scenario, hash))
}

fn base_manifest(
    command: &str,
    common: &CommonArgs,
    scenario_sha256: String,
    seed: u64,
    solver: &SolverParams,
) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_path: common.scenario.display().to_string(),
        scenario_sha256,
        seed,
        workers: common.workers,
        solver: SolverSettings::from(solver),
        iteration: None,
        artifacts: BTreeMap::new(),
        timings_s: BTreeMap::new(),
    }
}

/// Loads `trajectories_pop{i}.csv` for every population, failing with the
/// given exit code (2 for user-supplied bundles, 5 for run artifacts).
fn read_bundles(dir: &Path, scenario: &Scenario, code: u8) -> Result<Vec<TrajectoryBundle>, Failure> {
    let mut bundles = Vec::with_capacity(scenario.n_populations());
    for pop in 0..scenario.n_populations() {
        let path = dir.join(format!("trajectories_pop{pop}.csv"));
        let file = fs::File::open(&path)
            .map_err(|e| Failure::new(code, format!("cannot read bundle {}: {e}", path.display())))?;
        let bundle = export::read_bundle_csv(&mut BufReader::new(file))
            .map_err(|e| Failure::new(code, format!("{}: {e}", path.display())))?;
        if bundle.n_nodes() != scenario.grid.n_slices() {
            return Err(Failure::new(
                code,
                format!(
                    "{}: bundle has {} time nodes, scenario grid has {}",
                    path.display(),
                    bundle.n_nodes(),
                    scenario.grid.n_slices()
                ),
            ));
        }
        bundles.push(bundle);
    }
    Ok(bundles)
}

pub fn solve(args: &SolveArgs) -> Result<u8, Failure> {
    let total = Instant::now();
    let (scenario, scenario_hash) = load_scenario(&args.common)?;
    let solver = solver_params(&args.common);
    let mut timings = BTreeMap::new();

    let bundles = match &args.bundles {
        Some(dir) => read_bundles(dir, &scenario, 2)?,
        None => equilibrium::initial_bundles(&scenario)?,
    };

    let t = Instant::now();
    let responses = par::with_workers(args.common.workers, || -> mfg_core::Result<Vec<_>> {
        let field = SpeedField::from_bundles(&bundles, &scenario.config.speed, &scenario.grid)?;
        (0..scenario.n_populations())
            .map(|pop| equilibrium::best_response(&scenario, &field, pop, &solver))
            .collect()
    })?;
    timings.insert("solve_s".to_string(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let mut out = ArtifactDir::create(&args.out)?;
    for (pop, (bundle, value)) in responses.iter().enumerate() {
        let mut csv = Vec::new();
        export::write_value_csv(&mut csv, value)?;
        out.write(&format!("phi_pop{pop}.csv"), &csv)?;

        let mut bin = Vec::new();
        export::write_value_binary(&mut bin, value)?;
        out.write(&format!("phi_pop{pop}.bin"), &bin)?;

        let mut traj = Vec::new();
        export::write_bundle_csv(&mut traj, bundle)?;
        out.write(&format!("trajectories_pop{pop}.csv"), &traj)?;

        let stats = bundle.exit_stats();
        println!(
            "solve: pop {pop}: {} plan members, exited mass {:.4}, mean exit time {:.4}",
            bundle.len(),
            stats.exited_mass,
            stats.mean_exit_time
        );
    }
    timings.insert("export_s".to_string(), t.elapsed().as_secs_f64());
    timings.insert("total_s".to_string(), total.elapsed().as_secs_f64());

    let mut manifest =
        base_manifest("solve", &args.common, scenario_hash, scenario.config.seed, &solver);
    manifest.timings_s = timings;
    out.finish(manifest)?;
    println!("solve: artifacts in {}", args.out.display());
    Ok(0)
}

/// Shape of `result.json`.
#[derive(Serialize)]
struct EquilibriumSummary {
    converged: bool,
    iterations: usize,
    final_residual: f64,
    /// Optimality gap of the final plans against their own field.
    optimality: ResidualReport,
}

pub fn equilibrium(args: &EquilibriumArgs) -> Result<u8, Failure> {
    let total = Instant::now();
    let (scenario, scenario_hash) = load_scenario(&args.common)?;
    let solver = solver_params(&args.common);
    let mode = match args.mode {
        Mode::Fictitious => IterationMode::FictitiousPlay,
        Mode::Picard => IterationMode::Picard,
    };
    let params = IterationParams {
        mode,
        max_iters: args.max_iters,
        tolerance: args.tol,
        solver,
        ..IterationParams::default()
    };

    let t = Instant::now();
    let (outcome, gap) = par::with_workers(args.common.workers, || -> mfg_core::Result<_> {
        let outcome = equilibrium::fixed_point_iterate(&scenario, &params, |ev| {
            eprintln!("mfg: iteration {:>3}  residual {:.6e}", ev.iteration, ev.residual);
        })?;
        let gap = equilibrium::equilibrium_residual(&scenario, &outcome.bundles, &params.solver)?;
        Ok((outcome, gap))
    })?;
    let iterate_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut out = ArtifactDir::create(&args.out)?;

    let mut log = Vec::new();
    export::write_iteration_log(&mut log, &outcome.history)?;
    out.write("iteration_log.csv", &log)?;

    // Wall-clock data cannot be deterministic, so timings.csv stays out
    // of the hashed artifact set (like the manifest that carries the
    // phase totals); everything hashed is byte-identical for a fixed
    // seed.
    let mut tim = Vec::new();
    export::write_timings_csv(&mut tim, &outcome.history)?;
    fs::write(args.out.join("timings.csv"), &tim)
        .map_err(|e| Failure::new(1, format!("cannot write timings.csv: {e}")))?;

    // At most ~25 measure snapshots per population.
    let stride = (scenario.grid.n_slices().saturating_sub(1) / 24).max(1);
    for (pop, bundle) in outcome.bundles.iter().enumerate() {
        let mut traj = Vec::new();
        export::write_bundle_csv(&mut traj, bundle)?;
        out.write(&format!("trajectories_pop{pop}.csv"), &traj)?;

        let mut meas = Vec::new();
        export::write_measure_csv(&mut meas, bundle, stride)?;
        out.write(&format!("measures_pop{pop}.csv"), &meas)?;
    }

    let summary = EquilibriumSummary {
        converged: outcome.converged,
        iterations: outcome.iterations,
        final_residual: outcome.final_residual,
        optimality: gap.clone(),
    };
    let mut result = Vec::new();
    export::write_json(&mut result, &summary)?;
    out.write("result.json", &result)?;

    let mut manifest =
        base_manifest("equilibrium", &args.common, scenario_hash, scenario.config.seed, &params.solver);
    manifest.iteration = Some(IterationSettings {
        mode: match args.mode {
            Mode::Fictitious => "fictitious".to_string(),
            Mode::Picard => "picard".to_string(),
        },
        max_iters: params.max_iters,
        tolerance: params.tolerance,
        compaction_tol: params.compaction_tol,
    });
    manifest.timings_s.insert("iterate_s".to_string(), iterate_s);
    manifest.timings_s.insert("export_s".to_string(), t.elapsed().as_secs_f64());
    manifest.timings_s.insert("total_s".to_string(), total.elapsed().as_secs_f64());
    out.finish(manifest)?;

    println!(
        "equilibrium: {} after {} iterations, residual {:.6e}, mean optimality gap {:.2}%",
        if outcome.converged { "converged" } else { "iteration cap hit" },
        outcome.iterations,
        outcome.final_residual,
        100.0 * gap.relative_gap,
    );
    println!("equilibrium: artifacts in {}", args.out.display());
    Ok(if outcome.converged { 0 } else { 4 })
}

pub fn verify(args: &VerifyArgs) -> Result<u8, Failure> {
    let manifest = RunManifest::load(&args.artifacts)?;
    let text = fs::read_to_string(&args.common.scenario).map_err(|e| {
        Failure::new(2, format!("cannot read scenario {}: {e}", args.common.scenario.display()))
    })?;
    if sha256_hex(text.as_bytes()) != manifest.scenario_sha256 {
        return Err(Failure::new(
            5,
            format!(
                "scenario {} does not match the content hash in the manifest",
                args.common.scenario.display()
            ),
        ));
    }
    manifest.check_artifacts(&args.artifacts)?;

    let mut config = ScenarioConfig::from_json_str(&text)?;
    // The stored bundles were sampled under the manifest seed; keep it so
    // initial measures line up.  --seed only reseeds diagnostic draws.
    config.seed = manifest.seed;
    let scenario = Scenario::build(config)?;
    let bundles = read_bundles(&args.artifacts, &scenario, 5)?;

    let cfg = DiagnosticsConfig {
        seed: args.common.seed.unwrap_or(manifest.seed),
        solver: solver_params(&args.common),
        ..DiagnosticsConfig::default()
    };
    let report = par::with_workers(args.common.workers, || -> mfg_core::Result<_> {
        let mut report = diagnostics::full_report(&scenario, &bundles, &cfg)?;
        let gap = equilibrium::equilibrium_residual(&scenario, &bundles, &cfg.solver)?;
        report.checks.push(CheckResult {
            name: "equilibrium_gap".to_string(),
            pass: gap.relative_gap <= EQUILIBRIUM_GAP_TOL,
            measured: gap.relative_gap,
            tolerance: EQUILIBRIUM_GAP_TOL,
            notes: format!(
                "mean gap {:.3e} vs mean exit time {:.3e}",
                gap.mean_gap, gap.mean_exit_time
            ),
        });
        Ok(report)
    })?;
    print!("{}", report.human_table());

    let out_dir = args.out.as_deref().unwrap_or(&args.artifacts);
    fs::create_dir_all(out_dir)
        .map_err(|e| Failure::new(1, format!("cannot create {}: {e}", out_dir.display())))?;
    let mut bytes = Vec::new();
    export::write_json(&mut bytes, &report)?;
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, &bytes)
        .map_err(|e| Failure::new(1, format!("cannot write {}: {e}", report_path.display())))?;

    let ok = report.all_passed() && report.required_complete();
    if !ok {
        eprintln!("mfg: verification failed");
    }
    Ok(if ok { 0 } else { 1 })
}
