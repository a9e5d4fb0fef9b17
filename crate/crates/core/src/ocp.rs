//! Minimal-time value function: semi-Lagrangian solver, descent-direction
//! probes, and optimal trajectory tracing.
//!
//! The value `phi(t, x)` is the least time needed to reach the target set
//! when departing from `x` at time `t` under the speed limit `k(t, x)`.
//! It satisfies the dynamic programming principle
//!
//! ```text
//! phi(t, x) <= h + phi(t + h, y)      for every reachable y,
//! ```
//!
//! with equality along optimal motions, and `phi = 0` on the target.
//!
//! Discretization: explicit backward steps
//! `phi_j(x) = min_e [ dt + I(phi_{j+1})(x + dt * k(t_j, x) * e) ]`
//! over a fixed fan of unit directions `e`, with multilinear interpolation
//! `I`; nodes within one space step of the target are clamped to zero.
//! The terminal slice solves the stationary (frozen-speed) equation by
//! Gauss-Seidel sweeps with alternating orderings, so the horizon acts as
//! a continuation boundary condition rather than a wall.  Feet that leave
//! the box contribute `+inf`, i.e. the box boundary is non-traversable.

use crate::congestion::SpeedSource;
use crate::defaults::{
    CLUSTER_ANGLE, DIRECTION_COUNT, PROBE_STEP_FACTOR, SELECT_TOL, STATIONARY_MAX_SWEEPS,
    STATIONARY_TOL_FACTOR,
};
use crate::error::Error;
use crate::geom;
use crate::grid::{SpaceTimeGrid, MAX_DIM};
use crate::par;
use crate::target::TargetSet;
use crate::trajectory::PolylineTrajectory;
use crate::Result;

/// Knobs of the value solver.
#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    /// Number of probe directions per update.
    pub directions: usize,
    /// Stationary terminal solve stops when the sweep-to-sweep change
    /// drops below `stationary_tol_factor * dt`.
    pub stationary_tol_factor: f64,
    pub stationary_max_sweeps: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            directions: DIRECTION_COUNT,
            stationary_tol_factor: STATIONARY_TOL_FACTOR,
            stationary_max_sweeps: STATIONARY_MAX_SWEEPS,
        }
    }
}

/// Discrete value function on a space-time grid.
#[derive(Debug)]
pub struct ValueField {
    grid: SpaceTimeGrid,
    /// `values[j][node]` = value at time `j * dt`; `+inf` marks points
    /// from which the target is not reachable within the box.
    values: Vec<Vec<f64>>,
    target_mask: Vec<bool>,
    directions: Vec<Vec<f64>>,
    terminal_converged: bool,
    terminal_sweeps: usize,
}

impl ValueField {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn n_slices(&self) -> usize {
        self.values.len()
    }

    /// Nodes counted as "on target" (distance at most one space step).
    pub fn target_mask(&self) -> &[bool] {
        &self.target_mask
    }

    /// Whether the terminal stationary solve met its tolerance.
    pub fn terminal_converged(&self) -> bool {
        self.terminal_converged
    }

    pub fn terminal_sweeps(&self) -> usize {
        self.terminal_sweeps
    }

    /// Probe directions used by the solver.
    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    /// Value at `(t, x)`: nearest-earlier time slice, multilinear in
    /// space.  Returns `+inf` outside the box; times past the horizon
    /// freeze at the terminal slice.
    pub fn value_at(&self, t: f64, x: &[f64]) -> f64 {
        let j = self.grid.step_floor(t);
        self.grid.interpolate(&self.values[j], x).unwrap_or(f64::INFINITY)
    }

    /// Like [`Self::value_at`] but at an exact slice index.
    pub fn value_at_step(&self, j: usize, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values[j], x).unwrap_or(f64::INFINITY)
    }
}

/// Computes the node mask of points within one space step of the target.
fn build_target_mask(grid: &SpaceTimeGrid, target: &TargetSet) -> Result<Vec<bool>> {
    let mut mask = vec![false; grid.n_nodes()];
    let mut pos = vec![0.0; grid.dim()];
    let mut any = false;
    for (i, m) in mask.iter_mut().enumerate() {
        grid.node_position(i, &mut pos);
        if target.distance(&pos) <= grid.h() {
            *m = true;
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyTargetMask { h: grid.h() });
    }
    Ok(mask)
}

/// One semi-Lagrangian update at a node: `cost + min_e I(next)(x + step*e)`.
#[inline]
fn node_update(
    grid: &SpaceTimeGrid,
    next: &[f64],
    directions: &[Vec<f64>],
    x: &[f64],
    step: f64,
    cost: f64,
) -> f64 {
    let d = grid.dim();
    let mut foot = [0.0f64; MAX_DIM];
    let mut best = f64::INFINITY;
    for e in directions {
        for c in 0..d {
            foot[c] = x[c] + step * e[c];
        }
        if let Some(v) = grid.interpolate(next, &foot[..d]) {
            if v < best {
                best = v;
            }
        }
    }
    cost + best
}

/// Solves the discrete value function for one population's speed source.
pub fn solve_value_function<S: SpeedSource + ?Sized>(
    grid: &SpaceTimeGrid,
    target: &TargetSet,
    speed: &S,
    params: &SolverParams,
) -> Result<ValueField> {
    if target.dim() != grid.dim() || speed.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: target.dim() });
    }
    if params.directions == 0 {
        return Err(Error::InvalidParameter {
            name: "directions",
            reason: "need at least one probe direction".into(),
        });
    }
    let (_, k_max) = speed.k_bounds();
    grid.validate_cfl(k_max)?;
    let mask = build_target_mask(grid, target)?;
    let directions = geom::unit_directions(grid.dim(), params.directions);

    let n_slices = grid.n_slices();
    let n_nodes = grid.n_nodes();
    let dt = grid.dt();

    // Node positions are reused in every step; precompute once.
    let positions: Vec<Vec<f64>> = (0..n_nodes).map(|i| grid.node_position_vec(i)).collect();

    // Terminal slice: stationary solve with the speed frozen at t_max.
    let t_end = grid.t_final();
    let mut terminal = vec![f64::INFINITY; n_nodes];
    for (i, m) in mask.iter().enumerate() {
        if *m {
            terminal[i] = 0.0;
        }
    }
    let speeds_end: Vec<f64> =
        par::map_indexed(n_nodes, |i| speed.speed_at(t_end, &positions[i]));
    let tol = params.stationary_tol_factor * dt;
    let mut sweeps = 0;
    let mut converged = false;
    let orderings = 1usize << grid.dim();
    // The stationary equation has no time grid, so steps span a full cell
    // (cost h / k); axis-aligned feet then land exactly on neighbor
    // nodes, which lets the front escape the all-infinite initial state
    // even where dt * k < h would strand it inside one cell.
    let h = grid.h();
    while sweeps < params.stationary_max_sweeps {
        let ordering = sweeps % orderings;
        let mut max_change = 0.0f64;
        for raw in 0..n_nodes {
            let i = reorder_node(grid, raw, ordering);
            if mask[i] {
                continue;
            }
            let v = node_update(
                grid,
                &terminal,
                &directions,
                &positions[i],
                h,
                h / speeds_end[i],
            );
            let old = terminal[i];
            if v < old {
                let change = if old.is_finite() { old - v } else { f64::INFINITY };
                if change > max_change {
                    max_change = change;
                }
                terminal[i] = v;
            }
        }
        sweeps += 1;
        if max_change <= tol {
            converged = true;
            break;
        }
    }

    // Backward explicit steps; each slice depends only on the next one,
    // so nodes update independently (and in parallel).
    let mut values = vec![Vec::new(); n_slices];
    values[n_slices - 1] = terminal;
    for j in (0..n_slices - 1).rev() {
        let t = grid.time(j);
        let next = std::mem::take(&mut values[j + 1]);
        let slice = par::map_indexed(n_nodes, |i| {
            if mask[i] {
                return 0.0;
            }
            let k = speed.speed_at(t, &positions[i]);
            node_update(grid, &next, &directions, &positions[i], dt * k, dt)
        });
        values[j + 1] = next;
        values[j] = slice;
    }

    Ok(ValueField {
        grid: grid.clone(),
        values,
        target_mask: mask,
        directions,
        terminal_converged: converged,
        terminal_sweeps: sweeps,
    })
}

/// Maps a linear index to the node visited at that position of a
/// Gauss-Seidel sweep; bit `k` of `ordering` reverses axis `k`.
fn reorder_node(grid: &SpaceTimeGrid, raw: usize, ordering: usize) -> usize {
    if ordering == 0 {
        return raw;
    }
    let d = grid.dim();
    let mut rem = raw;
    let mut flat = 0;
    // Decompose `raw` in row-major order, flipping the flagged axes.
    let mut axes = [0usize; MAX_DIM];
    for k in (0..d).rev() {
        let n = grid.n_axis(k);
        axes[k] = rem % n;
        rem /= n;
    }
    for k in 0..d {
        let n = grid.n_axis(k);
        let i = if ordering >> k & 1 == 1 { n - 1 - axes[k] } else { axes[k] };
        flat = flat * n + i;
    }
    flat
}

/// Directional difference quotients of the value around one point.
///
/// `ratios[i] = [phi(t + h', x + h' k e_i) - phi(t, x)] / h'` for the
/// probe step `h'`; the dynamic programming principle bounds every ratio
/// below by `-1`, attained exactly along optimal directions.  `selected`
/// are the indices within [`SELECT_TOL`] of the best ratio.
pub struct DescentReport {
    pub directions: Vec<Vec<f64>>,
    pub ratios: Vec<f64>,
    pub selected: Vec<usize>,
    pub probe_h: f64,
    pub base_value: f64,
}

impl DescentReport {
    /// Index of the steepest-descent direction, if any ratio is finite.
    pub fn best(&self) -> Option<usize> {
        let mut best = None;
        let mut best_r = f64::INFINITY;
        for (i, &r) in self.ratios.iter().enumerate() {
            if r < best_r {
                best_r = r;
                best = Some(i);
            }
        }
        best
    }

    pub fn best_ratio(&self) -> f64 {
        self.best().map_or(f64::INFINITY, |i| self.ratios[i])
    }
}

/// Probes the value field around `(t, x)`.  `probe_h` should be a
/// multiple of `dt` so the probe lands on a stored slice; `None` uses
/// [`PROBE_STEP_FACTOR`]` * dt`.
pub fn descent_report<S: SpeedSource + ?Sized>(
    field: &ValueField,
    speed: &S,
    t: f64,
    x: &[f64],
    probe_h: Option<f64>,
) -> DescentReport {
    let grid = field.grid();
    let d = grid.dim();
    let h = probe_h.unwrap_or(PROBE_STEP_FACTOR * grid.dt());
    let base = field.value_at(t, x);
    let k = speed.speed_at(t, x);
    let directions = field.directions().to_vec();
    let mut ratios = Vec::with_capacity(directions.len());
    let mut foot = vec![0.0; d];
    for e in &directions {
        for c in 0..d {
            foot[c] = x[c] + h * k * e[c];
        }
        let v = field.value_at(t + h, &foot);
        let r = if base.is_finite() && v.is_finite() { (v - base) / h } else { f64::INFINITY };
        ratios.push(r);
    }
    let best = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    // The ratio landscape is locally quadratic in the angle, so the gap
    // between adjacent fan directions shrinks with the squared angular
    // spacing; scaling the selection window accordingly keeps it a
    // constant number of notches wide at any fan resolution (genuine
    // kink ties sit at gap ~0 and stay selected regardless).
    let m = directions.len();
    let fan_scale = if d >= 2 {
        (DIRECTION_COUNT as f64 / m as f64).powf(2.0 / (d as f64 - 1.0))
    } else {
        1.0
    };
    let tol = SELECT_TOL * fan_scale;
    let selected = if best.is_finite() {
        ratios
            .iter()
            .enumerate()
            .filter(|(_, &r)| r <= best + tol)
            .map(|(i, _)| i)
            .collect()
    } else {
        Vec::new()
    };
    DescentReport { directions, ratios, selected, probe_h: h, base_value: base }
}

/// Descent direction extracted from a probe report.
pub struct GradientEstimate {
    /// Unit descent direction (the negative normalized gradient where the
    /// value is differentiable); `None` when no direction descends.
    pub direction: Option<Vec<f64>>,
    /// Whether the selected directions form a single angular cluster.
    pub unique: bool,
    /// Largest angle between selected directions (radians).
    pub spread: f64,
}

/// Clusters the selected descent directions of a report.  A spread within
/// [`CLUSTER_ANGLE`] means the optimal direction is effectively unique and
/// the mean of the cluster estimates it.
pub fn descent_direction(report: &DescentReport) -> GradientEstimate {
    if report.selected.is_empty() {
        return GradientEstimate { direction: None, unique: false, spread: 0.0 };
    }
    let d = report.directions[0].len();
    let mut spread = 0.0f64;
    for (a, &i) in report.selected.iter().enumerate() {
        for &j in &report.selected[a + 1..] {
            spread =
                spread.max(geom::angle_between(&report.directions[i], &report.directions[j]));
        }
    }
    let mut mean = vec![0.0; d];
    for &i in &report.selected {
        for c in 0..d {
            mean[c] += report.directions[i][c];
        }
    }
    let norm = geom::norm(&mean);
    let direction = if norm > 1e-12 {
        Some(mean.iter().map(|v| v / norm).collect())
    } else {
        // Antipodal selections cancel; fall back to the single best.
        report.best().map(|i| report.directions[i].clone())
    };
    GradientEstimate { direction, unique: spread <= CLUSTER_ANGLE, spread }
}

/// Central-difference spatial gradient of the value at slice `j`.
///
/// Steps are clamped to the box (one-sided differences at the walls).
/// Returns `None` when a stencil point carries an infinite value or the
/// stencil degenerates.
pub fn fd_gradient(field: &ValueField, j: usize, x: &[f64], step: f64) -> Option<Vec<f64>> {
    let grid = field.grid();
    let d = grid.dim();
    let hi = grid.hi_effective();
    let mut g = vec![0.0; d];
    let mut probe = x.to_vec();
    for k in 0..d {
        let up_x = (x[k] + step).min(hi[k]);
        let dn_x = (x[k] - step).max(grid.lo()[k]);
        if up_x - dn_x < 1e-12 {
            return None;
        }
        probe[k] = up_x;
        let up = field.value_at_step(j, &probe);
        probe[k] = dn_x;
        let dn = field.value_at_step(j, &probe);
        probe[k] = x[k];
        if !up.is_finite() || !dn.is_finite() {
            return None;
        }
        g[k] = (up - dn) / (up_x - dn_x);
    }
    Some(g)
}

/// Follows the steepest-descent flow of the value field from `x0` at slice
/// `start_step` until the target band is hit or the horizon ends.
///
/// Direction choice is deterministic: every step takes the
/// smallest-ratio direction, ties broken by direction order.  Re-picking
/// each step keeps angular quantization errors from accumulating along a
/// single locked ray; the resulting paths may wobble by one fan notch
/// but stay centered on the true descent ray.
///
/// Points with infinite value yield a constant trajectory with infinite
/// exit time (the target is not reachable from there).
pub fn trace_optimal_trajectory<S: SpeedSource + ?Sized>(
    field: &ValueField,
    target: &TargetSet,
    speed: &S,
    start_step: usize,
    x0: &[f64],
) -> Result<PolylineTrajectory> {
    let grid = field.grid();
    let d = grid.dim();
    let dt = grid.dt();
    let n_slices = grid.n_slices();
    assert!(start_step < n_slices, "start step beyond horizon");
    let t0 = grid.time(start_step);

    if !field.value_at_step(start_step, x0).is_finite() {
        return PolylineTrajectory::new(
            t0,
            dt,
            vec![x0.to_vec(); n_slices - start_step],
            f64::INFINITY,
        );
    }

    let mut points = Vec::with_capacity(n_slices - start_step);
    let mut x = x0.to_vec();
    points.push(x.clone());
    let mut exit_time = f64::INFINITY;

    for j in start_step..n_slices - 1 {
        if target.distance(&x) <= grid.h() {
            exit_time = (j - start_step) as f64 * dt;
            break;
        }
        let t = grid.time(j);
        let report = descent_report(field, speed, t, &x, Some(dt));
        if report.selected.is_empty() {
            return Err(Error::TraceFailed {
                context: "steepest-descent trace".into(),
                reason: format!(
                    "no descent direction at t={t:.4}, x={x:?} (value {})",
                    report.base_value
                ),
            });
        }
        // Steepest ratio each step; exact ties keep the lowest direction
        // index.  Re-picking every step lets quantization errors
        // alternate in sign instead of accumulating along a locked ray.
        let mut pick = report.selected[0];
        for &i in &report.selected[1..] {
            if report.ratios[i] < report.ratios[pick] {
                pick = i;
            }
        }
        let k = speed.speed_at(t, &x);
        let e = &report.directions[pick];
        for c in 0..d {
            x[c] += dt * k * e[c];
        }
        points.push(x.clone());
    }

    // Hitting the band exactly at the last node.
    if exit_time.is_infinite() && target.distance(&x) <= grid.h() {
        exit_time = (points.len() - 1) as f64 * dt;
    }
    // Pad to the end of the horizon so bundles stay aligned.
    while points.len() < n_slices - start_step {
        let last = points.last().expect("nonempty").clone();
        points.push(last);
    }
    PolylineTrajectory::new(t0, dt, points, exit_time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congestion::{ConstantSpeed, FnSpeed};
    use crate::geom;
    use crate::grid::SpaceTimeGrid;
    use crate::target::TargetSet;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn params() -> SolverParams {
        SolverParams::default()
    }

    #[test]
    fn matches_distance_in_one_dimension() {
        let grid = SpaceTimeGrid::new(vec![-1.0], vec![1.0], 0.05, 0.05, 3.0).unwrap();
        let target = TargetSet::point(vec![0.0]).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 1 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.n_nodes() {
            let x = grid.node_position_vec(i);
            let truth = x[0].abs();
            let err = (field.value_at(0.0, &x) - truth).abs();
            worst = worst.max(err);
        }
        assert!(worst <= 0.12, "1-d eikonal error {worst}");
    }

    #[test]
    fn matches_distance_in_two_dimensions() {
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.05, 0.05, 2.5).unwrap();
        let target = TargetSet::point(vec![0.0, 0.0]).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.n_nodes() {
            let x = grid.node_position_vec(i);
            let truth = geom::norm(&x);
            let err = (field.value_at(0.0, &x) - truth).abs();
            worst = worst.max(err);
        }
        assert!(worst <= 0.12, "2-d eikonal error {worst}");
    }

    #[test]
    fn autonomous_speed_gives_time_constant_value() {
        // With a stationary terminal solve and a time-independent speed,
        // every backward step reproduces (approximately) the same slice.
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.1, 0.1, 1.5).unwrap();
        let target = TargetSet::ball(vec![0.5, 0.0], 0.2).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        assert!(field.terminal_converged());
        let last = field.slice(field.n_slices() - 1);
        for j in 0..field.n_slices() {
            for (a, b) in field.slice(j).iter().zip(last) {
                assert!((a - b).abs() <= 1e-4, "slice {j} drifted: {a} vs {b}");
            }
        }
    }

    #[test]
    fn target_band_is_zero() {
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.1, 0.1, 1.0).unwrap();
        let target = TargetSet::ball(vec![0.0, 0.0], 0.15).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        for i in 0..grid.n_nodes() {
            let x = grid.node_position_vec(i);
            if target.distance(&x) <= grid.h() {
                for j in 0..field.n_slices() {
                    assert_eq!(field.slice(j)[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn one_step_quotient_attains_minus_one_at_nodes() {
        // By construction phi(t,x) = dt + min_e I(phi(t+dt))(foot), so the
        // best one-step quotient at an off-target node is exactly -1.
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.1, 0.1, 1.5).unwrap();
        let target = TargetSet::ball(vec![0.0, 0.0], 0.2).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 50 {
            let i = rng.gen_range(0..grid.n_nodes());
            let j = rng.gen_range(0..field.n_slices() - 1);
            let x = grid.node_position_vec(i);
            if field.target_mask()[i] || !field.slice(j)[i].is_finite() {
                continue;
            }
            let report = descent_report(&field, &speed, grid.time(j), &x, None);
            let best = report.best_ratio();
            assert_abs_diff_eq!(best, -1.0, epsilon = 1e-9);
            // And no direction beats the principle's lower bound.
            for &r in &report.ratios {
                assert!(r >= -1.0 - 1e-9);
            }
            checked += 1;
        }
    }

    #[test]
    fn gradient_points_at_the_target() {
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.05, 0.05, 2.5).unwrap();
        let target = TargetSet::point(vec![0.0, 0.0]).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        let x = [0.6, 0.0];
        let report = descent_report(&field, &speed, 0.0, &x, None);
        let est = descent_direction(&report);
        assert!(est.unique, "expected a unique descent cluster");
        let dir = est.direction.unwrap();
        let angle = geom::angle_between(&dir, &[-1.0, 0.0]);
        assert!(angle <= 10f64.to_radians(), "angle {} deg", angle.to_degrees());
    }

    #[test]
    fn kink_between_two_targets_is_not_unique() {
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.05, 0.05, 2.5).unwrap();
        // Radius chosen so the mask boundary |x - c| <= r + h falls well
        // between node rings; a boundary on a ring would let float noise
        // mask the two balls asymmetrically.
        let target = TargetSet::new(vec![
            crate::target::TargetPrimitive::Ball { center: vec![0.8, 0.0], radius: 0.07 },
            crate::target::TargetPrimitive::Ball { center: vec![-0.8, 0.0], radius: 0.07 },
        ])
        .unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        // On the symmetry axis both +x and -x descend equally fast.
        let report = descent_report(&field, &speed, 0.0, &[0.0, 0.3], None);
        let est = descent_direction(&report);
        assert!(!est.unique, "kink point should report a non-unique direction");
    }

    #[test]
    fn traced_path_is_straight_for_radial_value() {
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.05, 0.05, 2.5).unwrap();
        let target = TargetSet::point(vec![0.0, 0.0]).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        let x0 = [0.7, 0.5];
        let tr = trace_optimal_trajectory(&field, &target, &speed, 0, &x0).unwrap();
        let truth = geom::norm(&x0);
        assert!(tr.has_exited());
        assert!(
            (tr.exit_time() - truth).abs() <= 2.0 * (grid.h() + grid.dt()),
            "exit time {} vs |x0| {}",
            tr.exit_time(),
            truth
        );
        // Every segment should roughly head for the origin.
        let radial = [-x0[0] / truth, -x0[1] / truth];
        for w in tr.points().windows(2) {
            let seg = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            if geom::norm(&seg) < 1e-12 {
                break; // reached the padded tail
            }
            let angle = geom::angle_between(&seg, &radial);
            assert!(angle <= 15f64.to_radians(), "segment angle {} deg", angle.to_degrees());
        }
    }

    #[test]
    fn trace_exits_band_with_padded_tail() {
        let grid = SpaceTimeGrid::new(vec![-1.0], vec![1.0], 0.05, 0.05, 3.0).unwrap();
        let target = TargetSet::point(vec![0.0]).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 1 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        let tr = trace_optimal_trajectory(&field, &target, &speed, 0, &[0.8]).unwrap();
        assert_eq!(tr.n_nodes(), grid.n_slices());
        assert!(tr.has_exited());
        // After exit the path stays put.
        let idx = (tr.exit_time() / grid.dt()).round() as usize;
        let settled = &tr.points()[idx];
        for p in &tr.points()[idx..] {
            assert_abs_diff_eq!(p[0], settled[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn unreachable_start_gives_constant_infinite_trajectory() {
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.1, 0.1, 1.0).unwrap();
        let target = TargetSet::ball(vec![0.0, 0.0], 0.15).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        // Outside the box the value is infinite.
        let tr = trace_optimal_trajectory(&field, &target, &speed, 0, &[3.0, 3.0]).unwrap();
        assert!(!tr.has_exited());
        assert_eq!(tr.points()[0], tr.points()[tr.n_nodes() - 1]);
    }

    #[test]
    fn missing_target_in_box_is_an_error() {
        let grid = SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.1, 0.1, 1.0).unwrap();
        let target = TargetSet::ball(vec![5.0, 5.0], 0.1).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        match solve_value_function(&grid, &target, &speed, &params()) {
            Err(Error::EmptyTargetMask { .. }) => {}
            other => panic!("expected EmptyTargetMask, got {other:?}"),
        }
    }

    #[test]
    fn cfl_violation_is_an_error() {
        let grid = SpaceTimeGrid::new(vec![-1.0], vec![1.0], 0.05, 0.2, 1.0).unwrap();
        let target = TargetSet::point(vec![0.0]).unwrap();
        let speed = ConstantSpeed { k: 2.0, dim: 1 };
        match solve_value_function(&grid, &target, &speed, &params()) {
            Err(Error::CflViolation { .. }) => {}
            other => panic!("expected CflViolation, got {other:?}"),
        }
    }

    #[test]
    fn spatially_varying_speed_slows_the_path() {
        // Speed is low on the right half, high on the left; reaching a
        // target on the right from the far right takes longer than the
        // plain distance would suggest.
        let speed = FnSpeed {
            f: |x: &[f64]| if x[0] > 0.0 { 0.5 } else { 1.0 },
            k_min: 0.5,
            k_max: 1.0,
            dim: 1,
        };
        let grid = SpaceTimeGrid::new(vec![-1.0], vec![1.0], 0.05, 0.05, 5.0).unwrap();
        let target = TargetSet::point(vec![0.0]).unwrap();
        let field = solve_value_function(&grid, &target, &speed, &params()).unwrap();
        let left = field.value_at(0.0, &[-0.9]);
        let right = field.value_at(0.0, &[0.9]);
        // Left travels at 1, right at 0.5: roughly 0.9 vs 1.8.
        assert!((left - 0.9).abs() <= 0.15, "left {left}");
        assert!((right - 1.8).abs() <= 0.25, "right {right}");
    }
}
