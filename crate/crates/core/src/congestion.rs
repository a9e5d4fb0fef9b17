//! Congestion speed law and grid-backed speed fields.
//!
//! The admissible speed at a point drops exponentially with the local
//! kernel density of the agent's own population and the average density of
//! the other populations:
//!
//! ```text
//! k(x) = k_min + (k_max - k_min) * exp(-a_self * rho_own(x) - a_cross * rho_other(x))
//! ```
//!
//! Densities use an isotropic Gaussian kernel of bandwidth `sigma`.  The
//! law is continuous, bounded in `[k_min, k_max]` and Lipschitz both in
//! space and with respect to the measures (in `W1`), which is what the
//! well-posedness of the minimal-time problem requires.
//!
//! [`SpeedField`] pre-scatters per-population densities onto the scenario
//! grid, one slice per time step, and evaluates speeds by bilinear
//! interpolation; field construction cost is linear in bundle size, and
//! [`SpeedField::blend_with`] updates the field in O(new bundle) when a
//! fixed-point iteration mixes in a best response.

use serde::{Deserialize, Serialize};

use crate::defaults::KERNEL_CUTOFF_SIGMAS;
use crate::error::Error;
use crate::grid::{SpaceTimeGrid, MAX_DIM};
use crate::measure::EmpiricalMeasure;
use crate::par;
use crate::trajectory::{PolylineTrajectory, TrajectoryBundle};
use crate::Result;

/// Parameters of the congestion speed law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedModel {
    pub k_min: f64,
    pub k_max: f64,
    /// Sensitivity to the agent's own population density.
    #[serde(default)]
    pub a_self: f64,
    /// Sensitivity to the average density of the other populations.
    #[serde(default)]
    pub a_cross: f64,
    /// Gaussian kernel bandwidth; if absent the scenario substitutes a
    /// grid-proportional default.
    #[serde(default)]
    pub sigma: Option<f64>,
}

impl SpeedModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_min > 0.0) {
            return Err(Error::InvalidParameter {
                name: "k_min",
                reason: format!("must be > 0, got {}", self.k_min),
            });
        }
        if !(self.k_max >= self.k_min) {
            return Err(Error::InvalidParameter {
                name: "k_max",
                reason: format!("must be >= k_min, got {}", self.k_max),
            });
        }
        if !(self.a_self >= 0.0) || !(self.a_cross >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "a_self/a_cross",
                reason: "sensitivities must be >= 0".into(),
            });
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "sigma",
                    reason: format!("bandwidth must be > 0, got {s}"),
                });
            }
        }
        Ok(())
    }

    /// Constant-speed model (no congestion response).
    pub fn constant(k: f64) -> Self {
        Self { k_min: k, k_max: k, a_self: 0.0, a_cross: 0.0, sigma: None }
    }

    /// True when density has no effect on speed.
    pub fn congestion_off(&self) -> bool {
        self.k_max == self.k_min || (self.a_self == 0.0 && self.a_cross == 0.0)
    }

    /// Bandwidth with the grid-dependent fallback applied.
    pub fn bandwidth(&self, h: f64) -> f64 {
        self.sigma
            .unwrap_or(crate::defaults::BANDWIDTH_GRID_FACTOR * h)
    }

    /// Upper bound on the spatial Lipschitz constant of the speed law in
    /// dimension `d` (unit total mass per density).
    pub fn spatial_lipschitz_bound(&self, d: usize, h: f64) -> f64 {
        let sigma = self.bandwidth(h);
        let peak_grad = (-0.5f64).exp() / (sigma * gaussian_norm(sigma, d));
        (self.k_max - self.k_min) * (self.a_self + self.a_cross) * peak_grad
    }
}

/// Normalization constant `(2 pi)^{d/2} sigma^d` of the Gaussian kernel.
fn gaussian_norm(sigma: f64, d: usize) -> f64 {
    (2.0 * std::f64::consts::PI).powi(d as i32 / 2)
        * if d % 2 == 1 { (2.0 * std::f64::consts::PI).sqrt() } else { 1.0 }
        * sigma.powi(d as i32)
}

/// Gaussian kernel density of `m` at `x` (exact sum over atoms).
pub fn kernel_density(m: &EmpiricalMeasure, x: &[f64], sigma: f64) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    debug_assert_eq!(m.dim(), x.len());
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let norm = gaussian_norm(sigma, x.len());
    let mut acc = 0.0;
    for (p, w) in m.points().iter().zip(m.weights()) {
        let mut r2 = 0.0;
        for k in 0..x.len() {
            let d = x[k] - p[k];
            r2 += d * d;
        }
        acc += w * (-r2 * inv2s2).exp();
    }
    acc / norm
}

/// Average of the other populations' measures: `1/(N-1) * sum_{j != i} m_j`.
/// With a single population this is the zero measure.
pub fn hat_measure(populations: &[EmpiricalMeasure], i: usize) -> EmpiricalMeasure {
    let n = populations.len();
    assert!(i < n, "population index out of range");
    if n == 1 {
        return EmpiricalMeasure::zero(populations[0].dim());
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (j, m) in populations.iter().enumerate() {
        if j == i {
            continue;
        }
        points.extend(m.points().iter().cloned());
        weights.extend(m.weights().iter().cloned());
    }
    // Normalize by the actual accumulated mass so rounding in the input
    // weights cannot push the sum outside the constructor's tolerance.
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    EmpiricalMeasure::new(points, weights).expect("averaged weights sum to one")
}

/// Congestion speed at `x` given own-population measure `own` and averaged
/// other-population measure `other` (exact kernel sums).
pub fn speed(
    model: &SpeedModel,
    own: &EmpiricalMeasure,
    other: &EmpiricalMeasure,
    x: &[f64],
    sigma: f64,
) -> f64 {
    let rho_own = kernel_density(own, x, sigma);
    let rho_other = kernel_density(other, x, sigma);
    model.k_min
        + (model.k_max - model.k_min)
            * (-model.a_self * rho_own - model.a_cross * rho_other).exp()
}

/// Anything the value solver can query for a speed limit.
pub trait SpeedSource: Sync {
    fn dim(&self) -> usize;
    /// `(k_min, k_max)` bounds valid for every evaluation.
    fn k_bounds(&self) -> (f64, f64);
    fn speed_at(&self, t: f64, x: &[f64]) -> f64;
}

/// Time-independent analytic speed limit, mainly for tests and benchmarks.
pub struct FnSpeed<F: Fn(&[f64]) -> f64 + Sync> {
    pub f: F,
    pub k_min: f64,
    pub k_max: f64,
    pub dim: usize,
}

impl<F: Fn(&[f64]) -> f64 + Sync> SpeedSource for FnSpeed<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn k_bounds(&self) -> (f64, f64) {
        (self.k_min, self.k_max)
    }

    fn speed_at(&self, _t: f64, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Constant speed everywhere.
pub struct ConstantSpeed {
    pub k: f64,
    pub dim: usize,
}

impl SpeedSource for ConstantSpeed {
    fn dim(&self) -> usize {
        self.dim
    }

    fn k_bounds(&self) -> (f64, f64) {
        (self.k, self.k)
    }

    fn speed_at(&self, _t: f64, _x: &[f64]) -> f64 {
        self.k
    }
}

/// Per-population, per-time-slice kernel densities scattered onto the grid,
/// plus the speed law on top.
///
/// Off-slice times use the nearest earlier slice; past the horizon the
/// last slice is frozen.  Evaluation clamps the query point into the box,
/// extending densities constantly outside it.
pub struct SpeedField {
    grid: SpaceTimeGrid,
    model: SpeedModel,
    sigma: f64,
    /// `density[pop][slice][node]`, own-population kernel density.
    density: Vec<Vec<Vec<f64>>>,
}

impl SpeedField {
    /// Scatters every bundle's per-slice positions onto the grid.
    /// Bundles must share the grid's time discretization.
    pub fn from_bundles(
        bundles: &[TrajectoryBundle],
        model: &SpeedModel,
        grid: &SpaceTimeGrid,
    ) -> Result<Self> {
        model.validate()?;
        if bundles.is_empty() {
            return Err(Error::InvalidParameter {
                name: "bundles",
                reason: "need at least one population".into(),
            });
        }
        let sigma = model.bandwidth(grid.h());
        let mut density = Vec::with_capacity(bundles.len());
        for b in bundles {
            check_alignment(b, grid)?;
            density.push(scatter_bundle(b, grid, sigma, 1.0));
        }
        Ok(Self { grid: grid.clone(), model: *model, sigma, density })
    }

    pub fn n_populations(&self) -> usize {
        self.density.len()
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn model(&self) -> &SpeedModel {
        &self.model
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Own-population density at `(t, x)` (bilinear, clamped to the box).
    pub fn density_at(&self, pop: usize, t: f64, x: &[f64]) -> f64 {
        let j = self.grid.step_floor(t);
        self.grid.interpolate_clamped(&self.density[pop][j], x)
    }

    /// Averaged other-population density at `(t, x)`.
    pub fn cross_density_at(&self, pop: usize, t: f64, x: &[f64]) -> f64 {
        let n = self.density.len();
        if n == 1 {
            return 0.0;
        }
        let j = self.grid.step_floor(t);
        let mut acc = 0.0;
        for q in 0..n {
            if q != pop {
                acc += self.grid.interpolate_clamped(&self.density[q][j], x);
            }
        }
        acc / (n - 1) as f64
    }

    /// Congestion speed for population `pop` at `(t, x)`.
    pub fn speed_at(&self, pop: usize, t: f64, x: &[f64]) -> f64 {
        if self.model.congestion_off() {
            return self.model.k_max;
        }
        let rho_own = self.density_at(pop, t, x);
        let rho_other = self.cross_density_at(pop, t, x);
        self.model.k_min
            + (self.model.k_max - self.model.k_min)
                * (-self.model.a_self * rho_own - self.model.a_cross * rho_other).exp()
    }

    /// View of one population's speed as a [`SpeedSource`].
    pub fn population(&self, pop: usize) -> PopulationSpeed<'_> {
        assert!(pop < self.n_populations());
        PopulationSpeed { field: self, pop }
    }

    /// Replaces population `pop`'s density by
    /// `(1 - lambda) * current + lambda * density(bundle)`.
    ///
    /// This is exact for measure mixtures (densities are linear in the
    /// measure) and keeps the per-iteration cost proportional to the new
    /// bundle, not the accumulated one.
    pub fn blend_with(
        &mut self,
        pop: usize,
        lambda: f64,
        bundle: &TrajectoryBundle,
    ) -> Result<()> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be in [0, 1], got {lambda}"),
            });
        }
        check_alignment(bundle, &self.grid)?;
        let fresh = scatter_bundle(bundle, &self.grid, self.sigma, 1.0);
        let old = &mut self.density[pop];
        for (slice_old, slice_new) in old.iter_mut().zip(&fresh) {
            for (o, n) in slice_old.iter_mut().zip(slice_new) {
                *o = (1.0 - lambda) * *o + lambda * *n;
            }
        }
        Ok(())
    }

    /// Applies the density delta of a compaction merge: mass `weight`
    /// moves from trajectory `removed` onto `kept`.
    pub fn apply_merge(
        &mut self,
        pop: usize,
        removed: &PolylineTrajectory,
        kept: &PolylineTrajectory,
        weight: f64,
    ) {
        let single = |tr: &PolylineTrajectory, sign: f64, out: &mut Vec<Vec<f64>>| {
            scatter_trajectory_into(tr, weight * sign, &self.grid, self.sigma, out);
        };
        let mut delta: Vec<Vec<f64>> =
            vec![vec![0.0; self.grid.n_nodes()]; self.grid.n_slices()];
        single(removed, -1.0, &mut delta);
        single(kept, 1.0, &mut delta);
        for (slice, d) in self.density[pop].iter_mut().zip(&delta) {
            for (o, v) in slice.iter_mut().zip(d) {
                *o += v;
            }
        }
    }
}

/// One population's slice of a [`SpeedField`].
pub struct PopulationSpeed<'a> {
    field: &'a SpeedField,
    pop: usize,
}

impl SpeedSource for PopulationSpeed<'_> {
    fn dim(&self) -> usize {
        self.field.grid.dim()
    }

    fn k_bounds(&self) -> (f64, f64) {
        (self.field.model.k_min, self.field.model.k_max)
    }

    fn speed_at(&self, t: f64, x: &[f64]) -> f64 {
        self.field.speed_at(self.pop, t, x)
    }
}

fn check_alignment(bundle: &TrajectoryBundle, grid: &SpaceTimeGrid) -> Result<()> {
    if bundle.dt() != grid.dt() || bundle.n_nodes() != grid.n_slices() {
        return Err(Error::GridMismatch(format!(
            "bundle time grid ({}, {}) does not match field grid ({}, {})",
            bundle.dt(),
            bundle.n_nodes(),
            grid.dt(),
            grid.n_slices()
        )));
    }
    if bundle.dim() != grid.dim() {
        return Err(Error::GridMismatch(format!(
            "bundle dimension {} does not match grid dimension {}",
            bundle.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Scatters a bundle's kernel density onto every slice; slices are
/// independent, hence computed in parallel, each with a fixed atom order.
fn scatter_bundle(
    bundle: &TrajectoryBundle,
    grid: &SpaceTimeGrid,
    sigma: f64,
    scale: f64,
) -> Vec<Vec<f64>> {
    let slices = grid.n_slices();
    par::map_indexed(slices, |j| {
        let mut out = vec![0.0; grid.n_nodes()];
        for (tr, w) in bundle.trajectories().iter().zip(bundle.weights()) {
            scatter_point(&tr.points()[j], scale * w, grid, sigma, &mut out);
        }
        out
    })
}

fn scatter_trajectory_into(
    tr: &PolylineTrajectory,
    weight: f64,
    grid: &SpaceTimeGrid,
    sigma: f64,
    out: &mut [Vec<f64>],
) {
    for (j, slice) in out.iter_mut().enumerate() {
        scatter_point(&tr.points()[j], weight, grid, sigma, slice);
    }
}

/// Adds `w * G_sigma(. - p)` to the nodal values within the kernel cutoff.
fn scatter_point(p: &[f64], w: f64, grid: &SpaceTimeGrid, sigma: f64, out: &mut [f64]) {
    let d = grid.dim();
    let h = grid.h();
    let cutoff = KERNEL_CUTOFF_SIGMAS * sigma;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let norm = gaussian_norm(sigma, d);
    let mut lo_idx = [0usize; MAX_DIM];
    let mut hi_idx = [0usize; MAX_DIM];
    for k in 0..d {
        let lo = ((p[k] - cutoff - grid.lo()[k]) / h).ceil().max(0.0) as usize;
        let hi_f = ((p[k] + cutoff - grid.lo()[k]) / h).floor();
        if hi_f < 0.0 {
            return; // window entirely left of the box
        }
        let hi = (hi_f as usize).min(grid.n_axis(k) - 1);
        if lo > hi {
            return;
        }
        lo_idx[k] = lo;
        hi_idx[k] = hi;
    }
    // Walk the index window.
    let mut idx = lo_idx;
    loop {
        let mut flat = 0;
        let mut r2 = 0.0;
        let mut stride = 1;
        for k in (0..d).rev() {
            flat += idx[k] * stride;
            stride *= grid.n_axis(k);
            let x = grid.lo()[k] + idx[k] as f64 * h;
            let dxk = x - p[k];
            r2 += dxk * dxk;
        }
        if r2 <= cutoff * cutoff {
            out[flat] += w * (-r2 * inv2s2).exp() / norm;
        }
        // Increment the multi-index.
        let mut k = d;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if idx[k] < hi_idx[k] {
                idx[k] += 1;
                break;
            }
            idx[k] = lo_idx[k];
        }
    }
}
