//! Verification checks for value fields and equilibrium plans.
//!
//! Each check probes a structural property the continuous model
//! guarantees and reports a measured worst case against a tolerance tied
//! to the discretization (`h`, `dt`).  The seven canonical checks:
//!
//! * `dpp` — dynamic programming: equality along traced optima, the
//!   one-sided inequality for arbitrary feasible one-steps;
//! * `hj_residual` — the stationary-in-form Hamilton–Jacobi relation
//!   `-d(phi)/dt + k |grad phi| = 1` at smooth points;
//! * `time_monotonicity` — difference quotients of `phi` in time are
//!   bounded below by `-1` (values cannot decay faster than real time);
//! * `direction_consistency` — the first step of a traced optimum
//!   aligns with the maximal-descent direction probed independently;
//! * `asymptotic_decay` — the flow's distance to its final state decays,
//!   obeys the initial-tail rate bound and settles by the reach bound;
//! * `support_bound` — mass starting in a ball of radius `R` never
//!   leaves the reach ball of radius `psi(R)`;
//! * `continuity_residual` — the plan, paired with the descent velocity
//!   field, satisfies the continuity equation weakly.
//!
//! All randomized sampling uses explicit seeds, so reports are
//! reproducible byte for byte.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::congestion::{SpeedField, SpeedSource};
use crate::defaults::{
    CONTINUITY_C, DIAGNOSTIC_SAMPLES, DIRECTION_ANGLE_TOL_DEG, DIRECTION_PASS_FRACTION,
    GRAD_NORM_FLOOR, KINK_SECOND_DIFF_FACTOR,
};
use crate::error::Error;
use crate::geom;
use crate::measure::EmpiricalMeasure;
use crate::ocp::{
    descent_direction, descent_report, fd_gradient, solve_value_function,
    trace_optimal_trajectory, SolverParams, ValueField,
};
use crate::par;
use crate::scenario::Scenario;
use crate::target::{reach_bounds, TargetSet};
use crate::trajectory::TrajectoryBundle;
use crate::transport::{w1_distance, wasserstein};
use crate::Result;

/// Outcome of one verification check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Worst measured quantity (contextual; see `notes`).
    pub measured: f64,
    /// Threshold the measurement was held against.
    pub tolerance: f64,
    pub notes: String,
}

impl CheckResult {
    fn from_measure(name: &str, measured: f64, tolerance: f64, notes: String) -> Self {
        Self { name: name.into(), pass: measured <= tolerance, measured, tolerance, notes }
    }
}

/// The canonical check names a complete report must contain.
pub const REQUIRED_CHECKS: [&str; 7] = [
    "dpp",
    "hj_residual",
    "time_monotonicity",
    "direction_consistency",
    "asymptotic_decay",
    "support_bound",
    "continuity_residual",
];

/// A set of check outcomes plus helpers for rendering.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub checks: Vec<CheckResult>,
}

impl DiagnosticsReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Whether every canonical check is present.
    pub fn required_complete(&self) -> bool {
        REQUIRED_CHECKS
            .iter()
            .all(|name| self.checks.iter().any(|c| c.name == *name))
    }

    /// One line per check, stable formatting.
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<24} measured {:>12.6e}  tol {:>12.6e}  {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance,
                c.notes
            ));
        }
        out
    }
}

/// Sampling controls for the randomized checks.
#[derive(Debug, Clone)]
pub struct DiagnosticsConfig {
    pub seed: u64,
    pub samples: usize,
    pub bumps: usize,
    pub radii: usize,
    pub solver: SolverParams,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: DIAGNOSTIC_SAMPLES,
            bumps: 10,
            radii: 20,
            solver: SolverParams::default(),
        }
    }
}

/// Uniform point in the grid box.
fn sample_point(rng: &mut ChaCha8Rng, field: &ValueField) -> Vec<f64> {
    let grid = field.grid();
    let hi = grid.hi_effective();
    (0..grid.dim()).map(|k| rng.gen_range(grid.lo()[k]..hi[k])).collect()
}

/// Uniform point with finite value, outside the target band.
fn sample_start(
    rng: &mut ChaCha8Rng,
    field: &ValueField,
    target: &TargetSet,
) -> Option<Vec<f64>> {
    let h = field.grid().h();
    for _ in 0..200 {
        let x = sample_point(rng, field);
        if field.value_at_step(0, &x).is_finite() && target.distance(&x) > 2.0 * h {
            return Some(x);
        }
    }
    None
}

/// Equality of the programming principle along traced optima: the sum
/// `phi(t, path(t)) + t` stays constant (worst drift over paths).
pub fn dpp_trace_drift<S: SpeedSource + ?Sized>(
    field: &ValueField,
    target: &TargetSet,
    speed: &S,
    seed: u64,
    samples: usize,
) -> Result<f64> {
    let grid = field.grid();
    let dt = grid.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut used = 0;
    while used < samples {
        let Some(x0) = sample_start(&mut rng, field, target) else { break };
        let tr = trace_optimal_trajectory(field, target, speed, 0, &x0)?;
        if !tr.has_exited() {
            continue; // horizon ran out; the equality claim needs arrival
        }
        let base = field.value_at_step(0, &x0);
        let exit_idx = (tr.exit_time() / dt).round() as usize;
        for i in 0..=exit_idx {
            let s = i as f64 * dt;
            let v = field.value_at(s, &tr.points()[i]);
            if v.is_finite() {
                worst = worst.max((v + s - base).abs());
            }
        }
        used += 1;
    }
    Ok(worst)
}

/// One-sided inequality for arbitrary feasible moves: going anywhere for
/// one step and then acting optimally cannot beat the value.  Returns the
/// worst violation (positive means the inequality failed by that much).
pub fn dpp_one_step_violation<S: SpeedSource + ?Sized>(
    field: &ValueField,
    speed: &S,
    seed: u64,
    samples: usize,
) -> f64 {
    let grid = field.grid();
    let d = grid.dim();
    let dt = grid.dt();
    let hi = grid.hi_effective();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut used = 0;
    let mut tries = 0;
    while used < samples && tries < samples * 50 {
        tries += 1;
        let x = sample_point(&mut rng, field);
        let j = rng.gen_range(0..grid.n_slices() - 1);
        let t = grid.time(j);
        let base = field.value_at_step(j, &x);
        if !base.is_finite() {
            continue;
        }
        // Random feasible step: any direction, any fraction of the local
        // speed limit.
        let k = speed.speed_at(t, &x);
        let beta: f64 = rng.gen_range(0.0..1.0);
        let mut e: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = geom::norm(&e);
        if n < 1e-9 {
            continue;
        }
        for c in &mut e {
            *c /= n;
        }
        let y: Vec<f64> = (0..d).map(|c| x[c] + dt * beta * k * e[c]).collect();
        if (0..d).any(|c| y[c] < grid.lo()[c] || y[c] > hi[c]) {
            continue;
        }
        let v = field.value_at_step(j + 1, &y);
        if !v.is_finite() {
            continue;
        }
        let slack = v + dt - base;
        if -slack > worst {
            worst = -slack;
        }
        used += 1;
    }
    worst
}

/// Median absolute residual of `-d(phi)/dt + k |grad phi| - 1` over
/// randomly sampled smooth interior nodes.
pub fn hj_median_residual<S: SpeedSource + ?Sized>(
    field: &ValueField,
    speed: &S,
    seed: u64,
    samples: usize,
) -> f64 {
    let grid = field.grid();
    let d = grid.dim();
    let h = grid.h();
    let dt = grid.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residuals = Vec::new();
    let mut tries = 0;
    while residuals.len() < samples && tries < samples * 100 {
        tries += 1;
        let i = rng.gen_range(0..grid.n_nodes());
        let j = rng.gen_range(0..grid.n_slices() - 1);
        if field.target_mask()[i] {
            continue;
        }
        let x = grid.node_position_vec(i);
        // Stay a full stencil away from the box edge.
        let hi = grid.hi_effective();
        if (0..d).any(|k| x[k] - h < grid.lo()[k] - 1e-12 || x[k] + h > hi[k] + 1e-12) {
            continue;
        }
        let center = field.slice(j)[i];
        if !center.is_finite() {
            continue;
        }
        let mut grad2 = 0.0;
        let mut smooth = true;
        let mut probe = x.clone();
        for k in 0..d {
            probe[k] = x[k] + h;
            let up = field.value_at_step(j, &probe);
            probe[k] = x[k] - h;
            let down = field.value_at_step(j, &probe);
            probe[k] = x[k];
            if !up.is_finite() || !down.is_finite() {
                smooth = false;
                break;
            }
            // Centered second difference flags gradient kinks.
            if (up - 2.0 * center + down).abs() > KINK_SECOND_DIFF_FACTOR * h {
                smooth = false;
                break;
            }
            let g = (up - down) / (2.0 * h);
            grad2 += g * g;
        }
        if !smooth {
            continue;
        }
        let next = field.slice(j + 1)[i];
        if !next.is_finite() {
            continue;
        }
        let dphi_dt = (next - center) / dt;
        let k_speed = speed.speed_at(grid.time(j), &x);
        residuals.push((-dphi_dt + k_speed * grad2.sqrt() - 1.0).abs());
    }
    if residuals.is_empty() {
        return f64::INFINITY;
    }
    residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    residuals[residuals.len() / 2]
}

/// Smallest time difference quotient of the value over random samples;
/// the model guarantees quotients above `-1`.
pub fn time_quotient_minimum(field: &ValueField, seed: u64, samples: usize) -> f64 {
    let grid = field.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_q = f64::INFINITY;
    let mut used = 0;
    let mut tries = 0;
    while used < samples && tries < samples * 50 {
        tries += 1;
        let x = sample_point(&mut rng, field);
        let n = grid.n_slices();
        if n < 6 {
            break;
        }
        let j0 = rng.gen_range(0..n - 4);
        let j1 = rng.gen_range(j0 + 4..n);
        let a = field.value_at_step(j0, &x);
        let b = field.value_at_step(j1, &x);
        if !a.is_finite() || !b.is_finite() {
            continue;
        }
        let q = (b - a) / ((j1 - j0) as f64 * grid.dt());
        min_q = min_q.min(q);
        used += 1;
    }
    min_q
}

/// Fraction of samples whose traced first step aligns (within the angle
/// tolerance) with the maximal-descent direction probed over a doubled
/// step.  Only points with a unique descent cluster count.
pub fn direction_agreement_fraction<S: SpeedSource + ?Sized>(
    field: &ValueField,
    target: &TargetSet,
    speed: &S,
    seed: u64,
    samples: usize,
) -> Result<f64> {
    let grid = field.grid();
    let dt = grid.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0usize;
    let mut used = 0usize;
    let mut tries = 0;
    while used < samples && tries < samples * 50 {
        tries += 1;
        let Some(x) = sample_start(&mut rng, field, target) else { break };
        if field.value_at_step(0, &x) <= 4.0 * dt {
            continue; // too close to arrival for a meaningful step
        }
        // Independent probe over a doubled horizon.
        let report = descent_report(field, speed, 0.0, &x, Some(2.0 * dt));
        let est = descent_direction(&report);
        if !est.unique {
            continue;
        }
        let Some(probe_dir) = est.direction else { continue };
        let tr = trace_optimal_trajectory(field, target, speed, 0, &x)?;
        let step: Vec<f64> =
            (0..grid.dim()).map(|c| tr.points()[1][c] - tr.points()[0][c]).collect();
        if geom::norm(&step) < 1e-12 {
            continue;
        }
        let angle = geom::angle_between(&step, &probe_dir);
        if angle.to_degrees() <= DIRECTION_ANGLE_TOL_DEG {
            agree += 1;
        }
        used += 1;
    }
    if used == 0 {
        return Ok(0.0);
    }
    Ok(agree as f64 / used as f64)
}

/// Distance-to-limit curve of a plan: exact transport distances between
/// per-atom-compressed slices, plus the compression error bound.
#[derive(Debug, Clone)]
pub struct DecayCurve {
    /// Grid times.
    pub times: Vec<f64>,
    /// Transport distance from the slice to the final slice (compressed).
    pub distance: Vec<f64>,
    /// Valid bound on how far compression can shift each distance.
    pub error: Vec<f64>,
}

/// Compresses a slice measure for affordable transport solves.  Members
/// already parked at their exit position pass through verbatim — their
/// positions match the final slice bit for bit, so they cancel exactly
/// inside the transport solve.  Still-moving members collapse to one
/// atom per distinct start position (weighted mean); the returned scalar
/// is the W_p cost of that collapse, a valid perturbation bound.
fn compress_slice(bundle: &TrajectoryBundle, j: usize, p: f64) -> (EmpiricalMeasure, f64) {
    let d = bundle.dim();
    let dt = bundle.dt();
    let mut groups: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    let mut sums: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut moving: Vec<(usize, usize)> = Vec::new(); // (member, group)
    for (m, (tr, w)) in bundle.trajectories().iter().zip(bundle.weights()).enumerate() {
        let parked = tr.has_exited() && (tr.exit_time() / dt).round() as usize <= j;
        if parked {
            points.push(tr.points()[j].clone());
            weights.push(*w);
            continue;
        }
        let key: Vec<u64> = tr.points()[0].iter().map(|c| c.to_bits()).collect();
        let gi = *groups.entry(key).or_insert_with(|| {
            sums.push((vec![0.0; d], 0.0));
            sums.len() - 1
        });
        for c in 0..d {
            sums[gi].0[c] += w * tr.points()[j][c];
        }
        sums[gi].1 += w;
        moving.push((m, gi));
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .map(|(s, w)| s.iter().map(|v| v / w).collect())
        .collect();
    let mut cost_p = 0.0;
    for (m, gi) in &moving {
        let disp = geom::dist(&bundle.trajectories()[*m].points()[j], &means[*gi]);
        cost_p += bundle.weights()[*m] * disp.powf(p);
    }
    for (mean, (_, w)) in means.into_iter().zip(sums) {
        points.push(mean);
        weights.push(w);
    }
    let measure = EmpiricalMeasure::new(points, weights)
        .expect("bundle invariants imply a valid measure");
    (measure, cost_p.powf(1.0 / p))
}

/// Computes the decay curve of a plan toward its final slice.
pub fn decay_curve(bundle: &TrajectoryBundle, p: f64) -> Result<DecayCurve> {
    let n = bundle.n_nodes();
    let last = n - 1;
    let (m_inf, e_inf) = compress_slice(bundle, last, p);
    let per_slice = par::map_indexed(n, |j| {
        let (m_j, e_j) = compress_slice(bundle, j, p);
        let dist = if p == 1.0 {
            w1_distance(&m_j, &m_inf)
        } else {
            wasserstein(&m_j, &m_inf, p).map(|(d, _)| d)
        };
        dist.map(|d| (d, e_j + e_inf))
    });
    let mut times = Vec::with_capacity(n);
    let mut distance = Vec::with_capacity(n);
    let mut error = Vec::with_capacity(n);
    for (j, r) in per_slice.into_iter().enumerate() {
        let (d, e) = r?;
        times.push(j as f64 * bundle.dt());
        distance.push(d);
        error.push(e);
    }
    Ok(DecayCurve { times, distance, error })
}

/// Asymptotic-behaviour measurements for one population.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticsOutcome {
    /// Worst increase of the decay curve after its running minimum
    /// (envelope-adjusted); the model predicts decay.
    pub monotone_violation: f64,
    /// Worst excess of the curve over the initial-tail rate bound.
    pub rate_excess: f64,
    /// Worst curve value after the settling bound (should be ~0).
    pub settle_excess: f64,
    /// The settling time bound used.
    pub settle_time: f64,
}

/// Evaluates decay, rate and settling for population `pop`'s plan.
pub fn asymptotic_checks(
    scenario: &Scenario,
    pop: usize,
    bundle: &TrajectoryBundle,
) -> Result<AsymptoticsOutcome> {
    let p = scenario.config.p;
    let speed = &scenario.config.speed;
    let reach = &scenario.reach[pop];
    let target = &scenario.targets[pop];
    let curve = decay_curve(bundle, p)?;
    let t0 = reach.d0 / speed.k_min;
    let alpha = speed.k_min;

    // Tail of the initial distribution beyond radius alpha * (t - t0),
    // weighted by the reach radius each atom can attain.
    let m0 = &scenario.initial[pop];
    let atom_norm: Vec<f64> = m0.points().iter().map(|q| geom::norm(q)).collect();
    let atom_psi: Vec<f64> = atom_norm
        .iter()
        .map(|&r| reach_bounds(target, speed.k_min, speed.k_max, r).map(|(_, psi)| psi))
        .collect::<Result<_>>()?;
    let tail = |t: f64| -> f64 {
        let radius = alpha * (t - t0);
        let mut acc = 0.0;
        for ((r, psi), w) in atom_norm.iter().zip(&atom_psi).zip(m0.weights()) {
            if *r > radius {
                acc += w * psi.powf(p);
            }
        }
        (2f64.powf(p) * acc).powf(1.0 / p)
    };

    let wiggle = 2.0 * (scenario.grid.h() + scenario.grid.dt());
    let mut monotone_violation = 0.0f64;
    let mut rate_excess = 0.0f64;
    let mut settle_excess = 0.0f64;
    let settle_time = reach.t_bound + 2.0 * scenario.grid.dt();
    let mut run_min = f64::INFINITY;
    for j in 0..curve.times.len() {
        let t = curve.times[j];
        if t < t0 {
            continue;
        }
        let upper = curve.distance[j] + curve.error[j];
        let lower = curve.distance[j] - curve.error[j];
        if run_min.is_finite() {
            monotone_violation = monotone_violation.max(lower - run_min - wiggle);
        }
        run_min = run_min.min(upper);
        // Discrete traces arrive O(h+dt) after the continuous bound
        // time, so the rate bound gets the same jitter allowance as
        // monotonicity.
        rate_excess = rate_excess.max(upper - tail(t) - wiggle);
        if t >= settle_time {
            settle_excess = settle_excess.max(upper - scenario.grid.h());
        }
    }
    Ok(AsymptoticsOutcome {
        monotone_violation: monotone_violation.max(0.0),
        rate_excess: rate_excess.max(0.0),
        settle_excess: settle_excess.max(0.0),
        settle_time,
    })
}

/// Worst violation of the reach-ball containment: mass that started
/// within radius `R` of the origin must stay within `psi(R)` at every
/// time.  Scans `n_radii` radii per population; returns the largest
/// positive mass deficit.
pub fn support_bound_violation(
    scenario: &Scenario,
    bundles: &[TrajectoryBundle],
    n_radii: usize,
) -> Result<f64> {
    let speed = &scenario.config.speed;
    let mut worst = 0.0f64;
    for (pop, bundle) in bundles.iter().enumerate() {
        let m0 = &scenario.initial[pop];
        let target = &scenario.targets[pop];
        let r0 = scenario.reach[pop].r0;
        let radii: Vec<f64> = (1..=n_radii).map(|k| r0 * k as f64 / n_radii as f64).collect();
        let init_mass: Vec<f64> = radii.iter().map(|&r| m0.mass_within(r)).collect();
        let psi: Vec<f64> = radii
            .iter()
            .map(|&r| reach_bounds(target, speed.k_min, speed.k_max, r).map(|(_, psi)| psi))
            .collect::<Result<_>>()?;
        let deficits = par::map_indexed(bundle.n_nodes(), |j| {
            let norms: Vec<f64> = bundle
                .trajectories()
                .iter()
                .map(|tr| geom::norm(&tr.points()[j]))
                .collect();
            let mut slice_worst = 0.0f64;
            for (k, &bound) in psi.iter().enumerate() {
                let mut inside = 0.0;
                for (n, w) in norms.iter().zip(bundle.weights()) {
                    if *n <= bound + 1e-12 {
                        inside += w;
                    }
                }
                slice_worst = slice_worst.max(init_mass[k] - inside);
            }
            slice_worst
        });
        for d in deficits {
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// Smooth compactly supported space-time bump used as a weak-form test
/// function.  Tensor product of `(1-u^2)^3` profiles, so it is C^2 with
/// explicit derivatives.
#[derive(Debug, Clone)]
pub struct TestBump {
    pub t_center: f64,
    pub t_width: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

/// C^2 bump profile on [-1, 1].
fn profile(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - u * u;
        s * s * s
    }
}

fn profile_deriv(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - u * u;
        -6.0 * u * s * s
    }
}

impl TestBump {
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        let mut v = profile((t - self.t_center) / self.t_width);
        for (c, xc) in self.center.iter().zip(x) {
            v *= profile((xc - c) / self.width);
        }
        v
    }

    pub fn dt(&self, t: f64, x: &[f64]) -> f64 {
        let mut v = profile_deriv((t - self.t_center) / self.t_width) / self.t_width;
        for (c, xc) in self.center.iter().zip(x) {
            v *= profile((xc - c) / self.width);
        }
        v
    }

    pub fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let pt = profile((t - self.t_center) / self.t_width);
        let d = x.len();
        let factors: Vec<f64> =
            (0..d).map(|k| profile((x[k] - self.center[k]) / self.width)).collect();
        for k in 0..d {
            let mut v = pt * profile_deriv((x[k] - self.center[k]) / self.width) / self.width;
            for (l, f) in factors.iter().enumerate() {
                if l != k {
                    v *= f;
                }
            }
            out[k] = v;
        }
    }

    pub fn in_support(&self, t: f64, x: &[f64]) -> bool {
        if (t - self.t_center).abs() >= self.t_width {
            return false;
        }
        self.center
            .iter()
            .zip(x)
            .all(|(c, xc)| (xc - c).abs() < self.width)
    }
}

/// Draws bumps supported strictly inside the horizon and away from the
/// target set (so arrived, parked mass never meets a bump).  Sampling on
/// a coarse grid and reusing the bumps on a refined one keeps the weak
/// functional identical across resolutions.
pub fn sample_test_bumps(
    grid: &crate::grid::SpaceTimeGrid,
    target: &TargetSet,
    seed: u64,
    n: usize,
) -> Result<Vec<TestBump>> {
    let t_final = grid.t_final();
    let h = grid.h();
    let dt = grid.dt();
    let extent = (0..grid.dim())
        .map(|k| grid.hi_effective()[k] - grid.lo()[k])
        .fold(f64::INFINITY, f64::min);
    // Widths must resolve the grid (several cells across) yet leave the
    // center room inside the box / horizon; reconcile the two, erroring
    // out when the grid is too coarse for any smooth bump to fit.
    let t_lo = (0.10 * t_final).max(4.0 * dt);
    let t_hi = (0.25 * t_final).max(1.25 * t_lo).min(0.499 * t_final);
    let w_lo = (0.15 * extent).max(4.0 * h);
    let w_hi = (0.30 * extent).max(1.25 * w_lo).min(0.499 * extent);
    if t_lo >= t_hi || w_lo >= w_hi {
        return Err(Error::Config(
            "grid too coarse for compactly supported test bumps".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bumps = Vec::with_capacity(n);
    let mut tries = 0;
    while bumps.len() < n {
        tries += 1;
        if tries > 1000 * n {
            return Err(Error::Config(
                "could not place mollifier bumps away from the target set".into(),
            ));
        }
        let t_width = rng.gen_range(t_lo..t_hi);
        let t_center = rng.gen_range(t_width..(t_final - t_width));
        let width = rng.gen_range(w_lo..w_hi);
        let center: Vec<f64> = (0..grid.dim())
            .map(|k| rng.gen_range(grid.lo()[k] + width..grid.hi_effective()[k] - width))
            .collect();
        if target.distance(&center) <= width + 2.0 * h {
            continue;
        }
        bumps.push(TestBump { t_center, t_width, center, width });
    }
    Ok(bumps)
}

/// Weak continuity-equation residual of a plan: the worst over sampled
/// bumps `zeta` of `| sum_members w * integral (dzeta/dt + v.grad zeta)
/// dt |`, where `v` is the member's own step velocity.  For mass that is
/// actually transported the integrand telescopes to a quadrature error
/// of order `h + dt`; mass parked inside a bump leaves the raw time
/// derivative behind, so stagnation shows up at order one.
pub fn continuity_residual(
    grid: &SpaceTimeGrid,
    target: &TargetSet,
    bundle: &TrajectoryBundle,
    seed: u64,
    n_bumps: usize,
) -> Result<f64> {
    let bumps = sample_test_bumps(grid, target, seed, n_bumps)?;
    Ok(continuity_residual_with(grid, bundle, &bumps))
}

/// Continuity residual against a caller-supplied set of bumps.
pub fn continuity_residual_with(
    grid: &SpaceTimeGrid,
    bundle: &TrajectoryBundle,
    bumps: &[TestBump],
) -> f64 {
    let d = grid.dim();
    let dt = grid.dt();
    // Per-member contribution to each bump's integral, then a sequential
    // fold in member order (parallel float reductions would not be
    // reproducible across thread counts).
    let contributions = par::map_indexed(bundle.len(), |m| {
        let tr = &bundle.trajectories()[m];
        let w = bundle.weights()[m];
        let mut acc = vec![0.0f64; bumps.len()];
        let mut grad = vec![0.0f64; d];
        // Left-endpoint rule on purpose: its first-order quadrature
        // error is the quantity the check budgets for, and exited
        // members (zero velocity, parked within one space step of the
        // target) sit outside every bump's support by construction.
        for j in 0..grid.n_slices() - 1 {
            let t = grid.time(j);
            let x = &tr.points()[j];
            if !bumps.iter().any(|b| b.in_support(t, x)) {
                continue;
            }
            let next = &tr.points()[j + 1];
            for (bi, b) in bumps.iter().enumerate() {
                if !b.in_support(t, x) {
                    continue;
                }
                b.grad(t, x, &mut grad);
                let advect: f64 =
                    (0..d).map(|c| (next[c] - x[c]) / dt * grad[c]).sum();
                acc[bi] += w * dt * (b.dt(t, x) + advect);
            }
        }
        acc
    });
    let mut totals = vec![0.0f64; bumps.len()];
    for acc in contributions {
        for (t, a) in totals.iter_mut().zip(acc) {
            *t += a;
        }
    }
    totals.into_iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Runs every canonical check against a set of plans and the field they
/// induce.  Aggregates across populations by worst case.
pub fn full_report(
    scenario: &Scenario,
    bundles: &[TrajectoryBundle],
    cfg: &DiagnosticsConfig,
) -> Result<DiagnosticsReport> {
    if bundles.len() != scenario.n_populations() {
        return Err(Error::DimensionMismatch {
            expected: scenario.n_populations(),
            got: bundles.len(),
        });
    }
    let grid = &scenario.grid;
    let field = SpeedField::from_bundles(bundles, &scenario.config.speed, grid)?;
    let scale = grid.h() + grid.dt();
    let mut checks = Vec::new();

    let mut values = Vec::with_capacity(bundles.len());
    for pop in 0..bundles.len() {
        values.push(solve_value_function(
            grid,
            &scenario.targets[pop],
            &field.population(pop),
            &cfg.solver,
        )?);
    }

    // Dynamic programming (trace equality + one-step inequality).
    let mut worst_dpp = 0.0f64;
    for pop in 0..bundles.len() {
        let speed = field.population(pop);
        let drift = dpp_trace_drift(
            &values[pop],
            &scenario.targets[pop],
            &speed,
            cfg.seed.wrapping_add(pop as u64),
            cfg.samples,
        )?;
        let violation = dpp_one_step_violation(
            &values[pop],
            &speed,
            cfg.seed.wrapping_add(100 + pop as u64),
            cfg.samples,
        );
        worst_dpp = worst_dpp.max(drift).max(violation);
    }
    checks.push(CheckResult::from_measure(
        "dpp",
        worst_dpp,
        2.0 * scale,
        "worst trace drift / one-step violation over populations".into(),
    ));

    let mut worst_hj = 0.0f64;
    for pop in 0..bundles.len() {
        let med = hj_median_residual(
            &values[pop],
            &field.population(pop),
            cfg.seed.wrapping_add(200 + pop as u64),
            cfg.samples,
        );
        worst_hj = worst_hj.max(med);
    }
    checks.push(CheckResult::from_measure(
        "hj_residual",
        worst_hj,
        5.0 * scale,
        "worst median smooth-point residual over populations".into(),
    ));

    let mut min_q = f64::INFINITY;
    for (pop, value) in values.iter().enumerate() {
        min_q = min_q.min(time_quotient_minimum(
            value,
            cfg.seed.wrapping_add(300 + pop as u64),
            cfg.samples,
        ));
    }
    // Quotients must exceed -1; the margin is the implied waiting cost.
    checks.push(CheckResult::from_measure(
        "time_monotonicity",
        (-1.0 - min_q).max(0.0),
        2.0 * scale / (4.0 * grid.dt()),
        format!("smallest time quotient {min_q:.4} (must stay above -1)"),
    ));

    let mut min_frac = 1.0f64;
    for pop in 0..bundles.len() {
        let frac = direction_agreement_fraction(
            &values[pop],
            &scenario.targets[pop],
            &field.population(pop),
            cfg.seed.wrapping_add(400 + pop as u64),
            cfg.samples.min(100),
        )?;
        min_frac = min_frac.min(frac);
    }
    checks.push(CheckResult::from_measure(
        "direction_consistency",
        1.0 - min_frac,
        1.0 - DIRECTION_PASS_FRACTION,
        format!("worst agreement fraction {min_frac:.3}"),
    ));

    let mut asym_measured = 0.0f64;
    let mut asym_notes = String::new();
    for (pop, bundle) in bundles.iter().enumerate() {
        let a = asymptotic_checks(scenario, pop, bundle)?;
        let wiggle_excess = a.monotone_violation;
        asym_measured = asym_measured.max(wiggle_excess).max(a.rate_excess).max(a.settle_excess);
        asym_notes.push_str(&format!(
            "pop {pop}: monotone {:.2e}, rate {:.2e}, settle {:.2e}; ",
            a.monotone_violation, a.rate_excess, a.settle_excess
        ));
    }
    checks.push(CheckResult::from_measure("asymptotic_decay", asym_measured, 1e-9, asym_notes));

    let support = support_bound_violation(scenario, bundles, cfg.radii)?;
    checks.push(CheckResult::from_measure(
        "support_bound",
        support,
        1e-10,
        format!("{} radii per population, all times", cfg.radii),
    ));

    let mut worst_cont = 0.0f64;
    for (pop, bundle) in bundles.iter().enumerate() {
        let r = continuity_residual(
            grid,
            &scenario.targets[pop],
            bundle,
            cfg.seed.wrapping_add(500 + pop as u64),
            cfg.bumps,
        )?;
        worst_cont = worst_cont.max(r);
    }
    checks.push(CheckResult::from_measure(
        "continuity_residual",
        worst_cont,
        CONTINUITY_C * scale,
        format!("{} bumps per population", cfg.bumps),
    ));

    Ok(DiagnosticsReport { checks })
}
