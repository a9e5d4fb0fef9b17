//! Uniform space-time grid: node indexing, multilinear interpolation and
//! step bookkeeping for the semi-Lagrangian solver.

use crate::defaults::GEOM_EPS;
use crate::error::Error;
use crate::Result;

/// Highest supported ambient dimension (stack-allocated interpolation
/// scratch; raise if ever needed).
pub const MAX_DIM: usize = 8;

/// A uniform grid on an axis-aligned box times a uniform time grid.
///
/// Spatial nodes sit at `lo[k] + i * h`; if the box side is not an exact
/// multiple of `h` the last node row extends slightly past `hi` so the
/// requested box is always covered.  Time slices sit at `j * dt` for
/// `j = 0..=n_steps`, with `n_steps * dt >= t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    h: f64,
    dt: f64,
    t_max: f64,
    n_axis: Vec<usize>,
    strides: Vec<usize>,
    n_steps: usize,
}

impl SpaceTimeGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, h: f64, dt: f64, t_max: f64) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        let d = lo.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidParameter {
                name: "box",
                reason: format!("dimension must be in 1..={MAX_DIM}, got {d}"),
            });
        }
        if !(h > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "h/dt",
                reason: format!("spacings must be > 0, got h = {h}, dt = {dt}"),
            });
        }
        if !(t_max >= dt) {
            return Err(Error::InvalidParameter {
                name: "t_max",
                reason: format!("horizon must be >= dt, got {t_max}"),
            });
        }
        let mut n_axis = Vec::with_capacity(d);
        for k in 0..d {
            if !(hi[k] > lo[k]) {
                return Err(Error::InvalidParameter {
                    name: "box",
                    reason: format!("axis {k}: hi must exceed lo"),
                });
            }
            let cells = ((hi[k] - lo[k]) / h - GEOM_EPS).ceil().max(1.0) as usize;
            n_axis.push(cells + 1);
        }
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * n_axis[k + 1];
        }
        let n_steps = ((t_max / dt) - GEOM_EPS).ceil().max(1.0) as usize;
        Ok(Self { lo, hi, h, dt, t_max, n_axis, strides, n_steps })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Requested horizon (the discrete horizon `t_final` may exceed it).
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    /// Requested upper corner; see [`Self::hi_effective`] for the covered one.
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Upper corner of the discretized box (last node row per axis).
    pub fn hi_effective(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.lo[k] + (self.n_axis[k] - 1) as f64 * self.h)
            .collect()
    }

    /// Nodes along axis `k`.
    pub fn n_axis(&self, k: usize) -> usize {
        self.n_axis[k]
    }

    /// Total spatial nodes.
    pub fn n_nodes(&self) -> usize {
        self.n_axis.iter().product()
    }

    /// Number of time intervals; there are `n_steps() + 1` slices.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_slices(&self) -> usize {
        self.n_steps + 1
    }

    /// Time of slice `j`.
    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Last grid time, `>= t_max`.
    pub fn t_final(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// Index of the nearest slice at or before `t` (clamped to the grid).
    pub fn step_floor(&self, t: f64) -> usize {
        let j = ((t / self.dt) + GEOM_EPS).floor();
        (j.max(0.0) as usize).min(self.n_steps)
    }

    /// Writes the coordinates of flat node `idx` into `out`.
    pub fn node_position(&self, idx: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        for k in 0..self.dim() {
            let i = (idx / self.strides[k]) % self.n_axis[k];
            out[k] = self.lo[k] + i as f64 * self.h;
        }
    }

    /// Allocating variant of [`Self::node_position`].
    pub fn node_position_vec(&self, idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.node_position(idx, &mut v);
        v
    }

    /// True if `x` lies in the (effective) box, with a tiny slack.
    pub fn contains(&self, x: &[f64]) -> bool {
        let slack = GEOM_EPS * self.h;
        (0..self.dim()).all(|k| {
            let hi_eff = self.lo[k] + (self.n_axis[k] - 1) as f64 * self.h;
            x[k] >= self.lo[k] - slack && x[k] <= hi_eff + slack
        })
    }

    /// Multilinear interpolation of nodal `values` at `x`.
    ///
    /// Returns `None` outside the box.  Infinity-aware: corners with
    /// negligible weight are skipped, so an unreachable (infinite) node
    /// only propagates when it genuinely carries weight.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        debug_assert_eq!(values.len(), self.n_nodes());
        let d = self.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        let slack = GEOM_EPS;
        for k in 0..d {
            let s = (x[k] - self.lo[k]) / self.h;
            let n = self.n_axis[k];
            let mut i = s.floor();
            let mut f = s - i;
            if i < 0.0 {
                if s >= -slack {
                    i = 0.0;
                    f = 0.0;
                } else {
                    return None;
                }
            } else if i as usize >= n - 1 {
                if s <= (n - 1) as f64 + slack {
                    i = (n - 2) as f64;
                    f = 1.0;
                } else {
                    return None;
                }
            }
            base[k] = i as usize;
            frac[k] = f.clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                w *= if up { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + up as usize) * self.strides[k];
            }
            if w <= 1e-14 {
                continue;
            }
            let v = values[idx];
            if v.is_infinite() {
                return Some(f64::INFINITY);
            }
            acc += w * v;
        }
        Some(acc)
    }

    /// Interpolation with `x` clamped into the box first (always succeeds).
    pub fn interpolate_clamped(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        let mut y = [0.0f64; MAX_DIM];
        for k in 0..d {
            let hi_eff = self.lo[k] + (self.n_axis[k] - 1) as f64 * self.h;
            y[k] = x[k].clamp(self.lo[k], hi_eff);
        }
        self.interpolate(values, &y[..d])
            .expect("clamped point must interpolate")
    }

    /// Fails when one explicit time step can out-run the spatial stencil.
    pub fn validate_cfl(&self, k_max: f64) -> Result<()> {
        let limit = self.h / k_max;
        if self.dt > limit * (1.0 + 1e-9) {
            return Err(Error::CflViolation { dt: self.dt, h: self.h, k_max, limit });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.5, 0.25, 1.0).unwrap()
    }

    #[test]
    fn node_counts_and_times() {
        let g = unit_grid();
        assert_eq!(g.n_axis(0), 5);
        assert_eq!(g.n_axis(1), 5);
        assert_eq!(g.n_nodes(), 25);
        assert_eq!(g.n_steps(), 4);
        assert_eq!(g.n_slices(), 5);
        assert_abs_diff_eq!(g.t_final(), 1.0, epsilon = 1e-12);
        assert_eq!(g.step_floor(0.30), 1);
        assert_eq!(g.step_floor(0.50), 2);
        assert_eq!(g.step_floor(99.0), 4);
    }

    #[test]
    fn box_is_covered_when_not_a_multiple_of_h() {
        let g = SpaceTimeGrid::new(vec![0.0], vec![1.0], 0.3, 0.1, 0.5).unwrap();
        // 4 cells of 0.3 cover [0, 1.2] ⊇ [0, 1].
        assert_eq!(g.n_axis(0), 5);
        assert_abs_diff_eq!(g.hi_effective()[0], 1.2, epsilon = 1e-12);
        assert!(g.contains(&[1.15]));
        assert!(!g.contains(&[1.3]));
    }

    #[test]
    fn position_index_roundtrip() {
        let g = unit_grid();
        for idx in 0..g.n_nodes() {
            let p = g.node_position_vec(idx);
            // Recover multi-index from the position and rebuild the flat index.
            let i0 = ((p[0] + 1.0) / 0.5).round() as usize;
            let i1 = ((p[1] + 1.0) / 0.5).round() as usize;
            assert_eq!(idx, i0 * 5 + i1);
        }
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let g = unit_grid();
        let f = |x: &[f64]| 2.0 * x[0] - 3.0 * x[1] + 0.5;
        let values: Vec<f64> = (0..g.n_nodes())
            .map(|i| f(&g.node_position_vec(i)))
            .collect();
        for &(a, b) in &[(0.1, -0.7), (-0.99, 0.99), (0.25, 0.25), (1.0, 1.0)] {
            let x = [a, b];
            assert_abs_diff_eq!(g.interpolate(&values, &x).unwrap(), f(&x), epsilon = 1e-12);
        }
        assert!(g.interpolate(&values, &[1.2, 0.0]).is_none());
    }

    #[test]
    fn interpolation_skips_zero_weight_infinite_corners() {
        let g = SpaceTimeGrid::new(vec![0.0], vec![1.0], 0.5, 0.1, 0.2).unwrap();
        // Node values at x = 0, 0.5, 1.
        let values = vec![1.0, 2.0, f64::INFINITY];
        // Query exactly on node 1: the infinite node has weight 0.
        assert_abs_diff_eq!(g.interpolate(&values, &[0.5]).unwrap(), 2.0, epsilon = 1e-12);
        // Query inside the last cell: infinity propagates.
        assert!(g.interpolate(&values, &[0.75]).unwrap().is_infinite());
    }

    #[test]
    fn clamped_interpolation_extends_constantly() {
        let g = SpaceTimeGrid::new(vec![0.0], vec![1.0], 0.5, 0.1, 0.2).unwrap();
        let values = vec![1.0, 2.0, 4.0];
        assert_abs_diff_eq!(g.interpolate_clamped(&values, &[-5.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.interpolate_clamped(&values, &[7.0]), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn cfl_guard() {
        let g = unit_grid(); // h = 0.5, dt = 0.25
        assert!(g.validate_cfl(1.0).is_ok());
        assert!(g.validate_cfl(2.0).is_ok()); // dt == h / k_max allowed
        assert!(matches!(g.validate_cfl(3.0), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(SpaceTimeGrid::new(vec![0.0], vec![0.0], 0.1, 0.1, 1.0).is_err());
        assert!(SpaceTimeGrid::new(vec![0.0], vec![1.0], -0.1, 0.1, 1.0).is_err());
        assert!(SpaceTimeGrid::new(vec![0.0], vec![1.0], 0.1, 0.1, 0.05).is_err());
    }
}
