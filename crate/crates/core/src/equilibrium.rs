//! Fixed-point computation of multi-population crowd equilibria.
//!
//! The state is one trajectory bundle per population: the plan its mass
//! follows.  One iteration consists of
//!
//! 1. solving each population's minimal-time problem against the speed
//!    field induced by the current plans,
//! 2. tracing a best-response bundle (one optimal path per initial atom),
//! 3. mixing the plans with the best response — fictitious play uses
//!    `lambda_n = 1/(n+1)`, so after `n` rounds every past response
//!    carries equal weight; Picard replaces the plan outright.
//!
//! The residual `r_n` is the *exact* largest 1-Wasserstein gap between
//! consecutive plans over all grid times and populations.  Computing it
//! naively would dwarf everything else, so the residual path leans on
//! three exact reductions: mass parked at bit-identical positions cancels
//! before the transport solve, a cheap identity-coupling upper bound per
//! time slice prunes the candidate times, and the surviving candidates
//! are solved in parallel batches until the bound certifies the maximum.
//!
//! Bundles are compacted after mixing: members that share their initial
//! atom and stay within [`COMPACTION_TOL`] of a kept representative (in
//! the trajectory metric, with matching exit behaviour) fold into it.
//! The induced density field is updated incrementally throughout.

use std::collections::HashMap;
use std::time::Instant;

use crate::congestion::{SpeedField, SpeedSource};
use crate::defaults::COMPACTION_TOL;
use crate::error::Error;
use crate::geom;
use crate::ocp::{solve_value_function, trace_optimal_trajectory, SolverParams, ValueField};
use crate::par;
use crate::scenario::Scenario;
use crate::trajectory::{PolylineTrajectory, TrajectoryBundle};
use crate::transport::{trajectory_metric, w1_distance};
use crate::Result;

/// How plans are updated between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationMode {
    /// Averages all best responses seen so far (`lambda_n = 1/(n+1)`).
    FictitiousPlay,
    /// Replaces the plan by the best response (`lambda = 1`).
    Picard,
}

/// Knobs of the fixed-point driver.
#[derive(Debug, Clone)]
pub struct IterationParams {
    pub mode: IterationMode,
    pub max_iters: usize,
    /// Stop once the residual drops to this level.
    pub tolerance: f64,
    pub solver: SolverParams,
    /// Trajectory-metric radius within which same-start members merge.
    pub compaction_tol: f64,
}

impl Default for IterationParams {
    fn default() -> Self {
        Self {
            mode: IterationMode::FictitiousPlay,
            max_iters: 60,
            tolerance: 1e-4,
            solver: SolverParams::default(),
            compaction_tol: COMPACTION_TOL,
        }
    }
}

/// Wall-clock phase breakdown of one iteration (informational only; kept
/// out of the deterministic iteration log).
#[derive(Debug, Clone, Copy, Default)]
pub struct IterationTimings {
    pub solve_s: f64,
    pub trace_s: f64,
    pub residual_s: f64,
}

/// Per-population numbers of one iteration.
#[derive(Debug, Clone)]
pub struct PopulationRecord {
    pub bundle_size: usize,
    pub mean_exit_time: f64,
    pub exited_mass: f64,
    pub unexited_mass: f64,
    /// Exact transport solves spent on this population's residual.
    pub residual_solves: usize,
    pub merges: usize,
}

/// One row of the iteration log.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub residual: f64,
    pub per_population: Vec<PopulationRecord>,
    pub timings: IterationTimings,
}

/// Snapshot passed to the iteration observer.
pub struct IterationEvent<'a> {
    pub iteration: usize,
    pub residual: f64,
    pub bundles: &'a [TrajectoryBundle],
    pub field: &'a SpeedField,
}

/// Result of a fixed-point run.
pub struct EquilibriumOutcome {
    pub bundles: Vec<TrajectoryBundle>,
    pub field: SpeedField,
    pub values: Vec<ValueField>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
}

/// Stationary plans: every atom stays put; atoms already inside the
/// target band count as exited at time zero.
pub fn initial_bundles(scenario: &Scenario) -> Result<Vec<TrajectoryBundle>> {
    let grid = &scenario.grid;
    let mut bundles = Vec::with_capacity(scenario.n_populations());
    for (target, m0) in scenario.targets.iter().zip(&scenario.initial) {
        let trajectories: Result<Vec<_>> = m0
            .points()
            .iter()
            .map(|p| {
                let exit =
                    if target.distance(p) <= grid.h() { 0.0 } else { f64::INFINITY };
                PolylineTrajectory::constant(p.clone(), grid.dt(), grid.n_slices(), exit)
            })
            .collect();
        bundles.push(TrajectoryBundle::new(trajectories?, m0.weights().to_vec())?);
    }
    Ok(bundles)
}

/// Solves population `pop`'s minimal-time problem in the given field and
/// traces one optimal path per initial atom.
pub fn best_response(
    scenario: &Scenario,
    field: &SpeedField,
    pop: usize,
    solver: &SolverParams,
) -> Result<(TrajectoryBundle, ValueField)> {
    let speed = field.population(pop);
    let target = &scenario.targets[pop];
    let value = solve_value_function(&scenario.grid, target, &speed, solver)?;
    let bundle = trace_bundle(scenario, &value, &speed, pop)?;
    Ok((bundle, value))
}

fn trace_bundle<S: SpeedSource + ?Sized>(
    scenario: &Scenario,
    value: &ValueField,
    speed: &S,
    pop: usize,
) -> Result<TrajectoryBundle> {
    let m0 = &scenario.initial[pop];
    let target = &scenario.targets[pop];
    let traced = par::map_indexed(m0.len(), |a| {
        trace_optimal_trajectory(value, target, speed, 0, &m0.points()[a])
    });
    let mut trajectories = Vec::with_capacity(m0.len());
    for (a, r) in traced.into_iter().enumerate() {
        match r {
            Ok(tr) => trajectories.push(tr),
            Err(Error::TraceFailed { reason, .. }) => {
                return Err(Error::TraceFailed {
                    context: format!("population {pop}, atom {a}"),
                    reason,
                });
            }
            Err(e) => return Err(e),
        }
    }
    TrajectoryBundle::new(trajectories, m0.weights().to_vec())
}

/// Record of one compaction pass.
struct CompactionOutcome {
    bundle: TrajectoryBundle,
    /// `(kept index in new bundle, removed trajectory, moved weight)`.
    merges: Vec<(usize, PolylineTrajectory, f64)>,
    /// Valid bound on the W1 perturbation the pass introduced at any
    /// time: sum of moved weight times sup-node displacement.
    slack: f64,
}

/// Folds near-duplicate members into earlier representatives.  Only
/// members sharing a bit-identical initial atom merge, so the plan's
/// time-zero marginal stays exactly the initial measure; exit behaviour
/// must match so arrival statistics stay faithful.
fn compact_bundle(bundle: &TrajectoryBundle, tol: f64, dt: f64) -> Result<CompactionOutcome> {
    let n = bundle.len();
    // Group by bit-exact start position.
    let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    let mut keep: Vec<bool> = vec![true; n];
    let mut kept_weight: Vec<f64> = bundle.weights().to_vec();
    let mut merges: Vec<(usize, PolylineTrajectory, f64)> = Vec::new();
    let mut slack = 0.0;
    let trajectories = bundle.trajectories();
    for i in 0..n {
        let key: Vec<u64> = trajectories[i].points()[0].iter().map(|c| c.to_bits()).collect();
        let reps = groups.entry(key).or_default();
        let mut merged = false;
        for &r in reps.iter() {
            let a = &trajectories[r];
            let b = &trajectories[i];
            let exit_compatible = match (a.has_exited(), b.has_exited()) {
                (true, true) => (a.exit_time() - b.exit_time()).abs() <= dt,
                (false, false) => true,
                _ => false,
            };
            if !exit_compatible {
                continue;
            }
            if trajectory_metric(a, b)? <= tol {
                kept_weight[r] += kept_weight[i];
                keep[i] = false;
                let disp = sup_node_distance(a, b);
                slack += bundle.weights()[i] * disp;
                merges.push((r, b.clone(), bundle.weights()[i]));
                merged = true;
                break;
            }
        }
        if !merged {
            reps.push(i);
        }
    }
    // Rebuild in stable order and remap merge targets.
    let mut new_index = vec![usize::MAX; n];
    let mut kept_trajectories = Vec::new();
    let mut kept_weights = Vec::new();
    for i in 0..n {
        if keep[i] {
            new_index[i] = kept_trajectories.len();
            kept_trajectories.push(trajectories[i].clone());
            kept_weights.push(kept_weight[i]);
        }
    }
    for m in &mut merges {
        m.0 = new_index[m.0];
    }
    Ok(CompactionOutcome {
        bundle: TrajectoryBundle::new(kept_trajectories, kept_weights)?,
        merges,
        slack,
    })
}

fn sup_node_distance(a: &PolylineTrajectory, b: &PolylineTrajectory) -> f64 {
    let mut sup: f64 = 0.0;
    for (p, q) in a.points().iter().zip(b.points()) {
        sup = sup.max(geom::dist(p, q));
    }
    sup
}

/// Exact `max_t W1(e_t # new, e_t # old)` over the grid's time slices.
///
/// `pair_ub(j)` must return a valid upper bound on the slice-`j` gap;
/// slices are solved exactly in descending bound order, in parallel
/// batches, until the next bound cannot beat the best exact value.
/// Returns `(max gap, number of exact solves)`.
fn max_slice_gap<F: Fn(usize) -> f64 + Sync>(
    new: &TrajectoryBundle,
    old: &TrajectoryBundle,
    n_slices: usize,
    pair_ub: F,
) -> Result<(f64, usize)> {
    let bounds: Vec<f64> = par::map_indexed(n_slices, &pair_ub);
    let mut order: Vec<usize> = (0..n_slices).collect();
    order.sort_by(|&a, &b| {
        bounds[b].partial_cmp(&bounds[a]).unwrap().then(a.cmp(&b))
    });
    let mut best = 0.0f64;
    let mut solves = 0;
    const BATCH: usize = 4;
    let mut cursor = 0;
    while cursor < order.len() {
        if bounds[order[cursor]] <= best {
            break;
        }
        let batch: Vec<usize> = order[cursor..]
            .iter()
            .copied()
            .take(BATCH)
            .filter(|&j| bounds[j] > best)
            .collect();
        if batch.is_empty() {
            break;
        }
        cursor += batch.len();
        let gaps = par::map_indexed(batch.len(), |bi| {
            let j = batch[bi];
            w1_distance(&new.measure_at_step(j), &old.measure_at_step(j))
        });
        for g in gaps {
            let g = g?;
            if g > best {
                best = g;
            }
            solves += 1;
        }
    }
    Ok((best, solves))
}

/// Runs the fixed-point iteration.  The observer sees every counted
/// iteration after mixing and compaction; pass `|_| {}` to ignore.
pub fn fixed_point_iterate<F>(
    scenario: &Scenario,
    params: &IterationParams,
    mut observer: F,
) -> Result<EquilibriumOutcome>
where
    F: FnMut(&IterationEvent<'_>),
{
    if params.max_iters == 0 {
        return Err(Error::InvalidParameter {
            name: "max_iters",
            reason: "need at least one iteration".into(),
        });
    }
    let n_pops = scenario.n_populations();
    let speed_model = &scenario.config.speed;
    let grid = &scenario.grid;

    // Warm start: best-respond once to the stationary plans.  This round
    // is not counted; it only replaces the arbitrary initial guess by a
    // plan of the right shape.
    let stationary = initial_bundles(scenario)?;
    let mut field = SpeedField::from_bundles(&stationary, speed_model, grid)?;
    let mut bundles = Vec::with_capacity(n_pops);
    let mut values = Vec::with_capacity(n_pops);
    for pop in 0..n_pops {
        let (b, v) = best_response(scenario, &field, pop, &params.solver)?;
        bundles.push(b);
        values.push(v);
    }
    field = SpeedField::from_bundles(&bundles, speed_model, grid)?;
    // Most recent best response per population; the residual bound
    // couples the new response against it.
    let mut last_response: Vec<TrajectoryBundle> = bundles.clone();
    let mut last_slack = vec![0.0f64; n_pops];

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut final_residual = f64::INFINITY;
    let mut iterations = 0;

    for n in 1..=params.max_iters {
        let lambda = match params.mode {
            IterationMode::FictitiousPlay => 1.0 / (n as f64 + 1.0),
            IterationMode::Picard => 1.0,
        };
        let mut timings = IterationTimings::default();
        let mut records: Vec<PopulationRecord> = Vec::with_capacity(n_pops);
        let mut residual = 0.0f64;

        // Best responses against the current field (all populations see
        // the same field, so responses are computed before any mixing).
        let mut responses = Vec::with_capacity(n_pops);
        for pop in 0..n_pops {
            let t0 = Instant::now();
            let speed = field.population(pop);
            let value =
                solve_value_function(grid, &scenario.targets[pop], &speed, &params.solver)?;
            timings.solve_s += t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let response = trace_bundle(scenario, &value, &speed, pop)?;
            timings.trace_s += t1.elapsed().as_secs_f64();
            values[pop] = value;
            responses.push(response);
        }

        for (pop, response) in responses.into_iter().enumerate() {
            let old = std::mem::replace(
                &mut bundles[pop],
                TrajectoryBundle::new(
                    vec![PolylineTrajectory::constant(
                        vec![0.0; grid.dim()],
                        grid.dt(),
                        1,
                        f64::INFINITY,
                    )?],
                    vec![1.0],
                )?,
            );
            let mixed = TrajectoryBundle::mixture(&old, &response, lambda)?;
            let compacted = compact_bundle(&mixed, params.compaction_tol, grid.dt())?;

            // Keep the density field aligned with the stored bundle.
            field.blend_with(pop, lambda, &response)?;
            for (kept_idx, removed, weight) in &compacted.merges {
                if sup_node_distance(&compacted.bundle.trajectories()[*kept_idx], removed) > 0.0
                {
                    field.apply_merge(
                        pop,
                        removed,
                        &compacted.bundle.trajectories()[*kept_idx],
                        *weight,
                    );
                }
            }

            // Residual: exact max-over-time W1 between the new and old
            // plans.  Upper bound per slice: move each atom's newest
            // response mass (lambda * w) from its previous response
            // position, leave everything else in place, and absorb the
            // displacement that this and the previous compaction caused.
            let t2 = Instant::now();
            let m0 = &scenario.initial[pop];
            let prev = &last_response[pop];
            let slack = compacted.slack + last_slack[pop];
            let new_bundle = &compacted.bundle;
            let response_ref = &response;
            let (gap, solves) = max_slice_gap(new_bundle, &old, grid.n_slices(), |j| {
                let mut ub = 0.0;
                for a in 0..m0.len() {
                    let pn = &response_ref.trajectories()[a].points()[j];
                    let po = &prev.trajectories()[a].points()[j];
                    ub += m0.weights()[a] * geom::dist(pn, po);
                }
                lambda * ub + slack
            })?;
            timings.residual_s += t2.elapsed().as_secs_f64();
            residual = residual.max(gap);

            let stats = compacted.bundle.exit_stats();
            records.push(PopulationRecord {
                bundle_size: compacted.bundle.len(),
                mean_exit_time: stats.mean_exit_time,
                exited_mass: stats.exited_mass,
                unexited_mass: stats.unexited_mass,
                residual_solves: solves,
                merges: compacted.merges.len(),
            });
            last_slack[pop] = compacted.slack;
            last_response[pop] = response;
            bundles[pop] = compacted.bundle;
        }

        iterations = n;
        final_residual = residual;
        history.push(IterationRecord {
            iteration: n,
            lambda,
            residual,
            per_population: records,
            timings,
        });
        observer(&IterationEvent { iteration: n, residual, bundles: &bundles, field: &field });
        if residual <= params.tolerance {
            converged = true;
            break;
        }
    }

    Ok(EquilibriumOutcome {
        bundles,
        field,
        values,
        history,
        converged,
        iterations,
        final_residual,
    })
}

/// Per-population optimality-gap report for a candidate equilibrium.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PopulationResidual {
    /// Plan-weighted mean of `max(0, exit time - phi(0, start))`.
    pub mean_gap: f64,
    pub max_gap: f64,
    pub mean_exit_time: f64,
    pub exited_mass: f64,
    /// Mass whose plan never reaches the target; its gap is counted
    /// against the horizon end, hence understated.
    pub unexited_mass: f64,
}

/// Equilibrium quality of a set of plans: how much longer each plan takes
/// than the optimum against the field the plans themselves induce.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResidualReport {
    pub per_population: Vec<PopulationResidual>,
    /// Mean gap over all populations' mass.
    pub mean_gap: f64,
    pub mean_exit_time: f64,
    /// `mean_gap / mean_exit_time` (0 when nothing exits).
    pub relative_gap: f64,
}

/// Measures the optimality gap of `bundles` against the field they
/// induce.  Each population's minimal-time problem is re-solved in that
/// field; a plan member's gap is its exit time minus the value at its
/// start, floored at zero (tracing noise can nominally beat the
/// interpolated value).
pub fn equilibrium_residual(
    scenario: &Scenario,
    bundles: &[TrajectoryBundle],
    solver: &SolverParams,
) -> Result<ResidualReport> {
    if bundles.len() != scenario.n_populations() {
        return Err(Error::DimensionMismatch {
            expected: scenario.n_populations(),
            got: bundles.len(),
        });
    }
    let field = SpeedField::from_bundles(bundles, &scenario.config.speed, &scenario.grid)?;
    let horizon = scenario.grid.t_final();
    let mut per_population = Vec::with_capacity(bundles.len());
    let mut gap_sum = 0.0;
    let mut exit_sum = 0.0;
    let mut exit_mass = 0.0;
    let mut mass = 0.0;
    for (pop, bundle) in bundles.iter().enumerate() {
        let speed = field.population(pop);
        let value = solve_value_function(&scenario.grid, &scenario.targets[pop], &speed, solver)?;
        let mut mean_gap = 0.0;
        let mut max_gap = 0.0f64;
        let mut exited_mass = 0.0;
        let mut unexited_mass = 0.0;
        let mut mean_exit = 0.0;
        for (tr, w) in bundle.trajectories().iter().zip(bundle.weights()) {
            let phi = value.value_at_step(0, &tr.points()[0]);
            let tau = if tr.has_exited() {
                exited_mass += w;
                mean_exit += w * tr.exit_time();
                tr.exit_time()
            } else {
                unexited_mass += w;
                horizon
            };
            let gap = if phi.is_finite() { (tau - phi).max(0.0) } else { 0.0 };
            mean_gap += w * gap;
            max_gap = max_gap.max(gap);
        }
        gap_sum += mean_gap;
        exit_sum += mean_exit;
        exit_mass += exited_mass;
        mass += exited_mass + unexited_mass;
        per_population.push(PopulationResidual {
            mean_gap,
            max_gap,
            mean_exit_time: if exited_mass > 0.0 { mean_exit / exited_mass } else { 0.0 },
            exited_mass,
            unexited_mass,
        });
    }
    let mean_gap = if mass > 0.0 { gap_sum / mass } else { 0.0 };
    let mean_exit_time = if exit_mass > 0.0 { exit_sum / exit_mass } else { 0.0 };
    Ok(ResidualReport {
        per_population,
        mean_gap,
        mean_exit_time,
        relative_gap: if mean_exit_time > 0.0 { mean_gap / mean_exit_time } else { 0.0 },
    })
}
