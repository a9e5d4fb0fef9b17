//! Time-discretized trajectories and weighted trajectory bundles.

use crate::defaults::WEIGHT_SUM_TOL;
use crate::error::Error;
use crate::measure::EmpiricalMeasure;
use crate::Result;

/// A piecewise-linear path sampled on the uniform time grid `j * dt`,
/// `j = 0..n_nodes`, covering the whole solver horizon.
///
/// The path is constant before its departure time `t0` and constant after
/// its last node.  `exit_time` is the travel time after departure at which
/// the path first reached its target (`f64::INFINITY` if it never did
/// within the horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct PolylineTrajectory {
    t0: f64,
    dt: f64,
    points: Vec<Vec<f64>>,
    exit_time: f64,
}

impl PolylineTrajectory {
    pub fn new(t0: f64, dt: f64, points: Vec<Vec<f64>>, exit_time: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be > 0, got {dt}"),
            });
        }
        if !(t0 >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "t0",
                reason: format!("must be >= 0, got {t0}"),
            });
        }
        if points.is_empty() {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: "trajectory needs at least one node".into(),
            });
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "points",
                    reason: "non-finite coordinate".into(),
                });
            }
        }
        if exit_time.is_nan() || exit_time < 0.0 {
            return Err(Error::InvalidParameter {
                name: "exit_time",
                reason: format!("must be >= 0 or infinite, got {exit_time}"),
            });
        }
        Ok(Self { t0, dt, points, exit_time })
    }

    /// A path that never moves (used for the stationary initial guess).
    pub fn constant(x: Vec<f64>, dt: f64, n_nodes: usize, exit_time: f64) -> Result<Self> {
        Self::new(0.0, dt, vec![x; n_nodes.max(1)], exit_time)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn n_nodes(&self) -> usize {
        self.points.len()
    }

    /// Time of the last stored node; the path is constant afterwards.
    pub fn t_last(&self) -> f64 {
        (self.points.len() - 1) as f64 * self.dt
    }

    /// Travel time to the target after departure; infinite if unreached.
    pub fn exit_time(&self) -> f64 {
        self.exit_time
    }

    pub fn has_exited(&self) -> bool {
        self.exit_time.is_finite()
    }

    /// Position at global time `t` (linear between nodes, constant outside
    /// the stored range).
    pub fn position(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let n = self.points.len();
        if t <= 0.0 || n == 1 {
            out.copy_from_slice(&self.points[0]);
            return;
        }
        let s = t / self.dt;
        let j = s.floor() as usize;
        if j >= n - 1 {
            out.copy_from_slice(&self.points[n - 1]);
            return;
        }
        let f = s - j as f64;
        let (a, b) = (&self.points[j], &self.points[j + 1]);
        for k in 0..out.len() {
            out[k] = a[k] + f * (b[k] - a[k]);
        }
    }

    /// Allocating variant of [`Self::position`].
    pub fn position_vec(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.position(t, &mut v);
        v
    }

    /// Largest distance covered in one time step.
    pub fn max_step_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| crate::geom::dist(&w[0], &w[1]))
            .fold(0.0, f64::max)
    }
}

/// A weighted family of trajectories sharing one time discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    trajectories: Vec<PolylineTrajectory>,
    weights: Vec<f64>,
}

impl TrajectoryBundle {
    pub fn new(trajectories: Vec<PolylineTrajectory>, weights: Vec<f64>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InvalidParameter {
                name: "trajectories",
                reason: "bundle must be nonempty".into(),
            });
        }
        if trajectories.len() != weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} trajectories but {} weights",
                trajectories.len(),
                weights.len()
            )));
        }
        let (dt, n, dim) =
            (trajectories[0].dt(), trajectories[0].n_nodes(), trajectories[0].dim());
        for t in &trajectories {
            if t.dt() != dt || t.n_nodes() != n {
                return Err(Error::GridMismatch(format!(
                    "bundle mixes time grids: ({}, {}) vs ({dt}, {n})",
                    t.dt(),
                    t.n_nodes()
                )));
            }
            if t.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: t.dim() });
            }
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("negative or non-finite weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "bundle weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(Self { trajectories, weights })
    }

    /// Equal-weight bundle.
    pub fn equal_weights(trajectories: Vec<PolylineTrajectory>) -> Result<Self> {
        let n = trajectories.len();
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "trajectories",
                reason: "bundle must be nonempty".into(),
            });
        }
        let w = vec![1.0 / n as f64; n];
        Self::new(trajectories, w)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[PolylineTrajectory] {
        &self.trajectories
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dt(&self) -> f64 {
        self.trajectories[0].dt()
    }

    pub fn n_nodes(&self) -> usize {
        self.trajectories[0].n_nodes()
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0].dim()
    }

    /// Convex combination `(1 - lambda) * a ⊕ lambda * b` as one bundle
    /// (no merging; compaction is a separate step).
    pub fn mixture(a: &Self, b: &Self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be in [0, 1], got {lambda}"),
            });
        }
        if lambda == 0.0 {
            return Ok(a.clone());
        }
        if lambda == 1.0 {
            return Ok(b.clone());
        }
        let mut trajectories = a.trajectories.clone();
        trajectories.extend(b.trajectories.iter().cloned());
        let mut weights: Vec<f64> = a.weights.iter().map(|w| w * (1.0 - lambda)).collect();
        weights.extend(b.weights.iter().map(|w| w * lambda));
        // Renormalize away the last few ulps so the invariant stays exact.
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self::new(trajectories, weights)
    }

    /// Distribution of positions at global time `t`.
    pub fn measure_at(&self, t: f64) -> EmpiricalMeasure {
        let points: Vec<Vec<f64>> =
            self.trajectories.iter().map(|tr| tr.position_vec(t)).collect();
        EmpiricalMeasure::new(points, self.weights.clone())
            .expect("bundle invariants imply a valid measure")
    }

    /// Distribution of positions at node index `j`, copying the stored
    /// node coordinates bit for bit.  Exactness matters: downstream
    /// transport code cancels mass sitting at identical positions, which
    /// only fires when shared points compare equal as floats.
    ///
    /// All member trajectories must start at the global origin of time.
    pub fn measure_at_step(&self, j: usize) -> EmpiricalMeasure {
        let points: Vec<Vec<f64>> = self
            .trajectories
            .iter()
            .map(|tr| {
                debug_assert_eq!(tr.t0(), 0.0, "step-indexed pushforward needs t0 = 0");
                tr.points()[j].clone()
            })
            .collect();
        EmpiricalMeasure::new(points, self.weights.clone())
            .expect("bundle invariants imply a valid measure")
    }

    /// Mass-weighted mean exit time over exited members plus the mass that
    /// never exited.
    pub fn exit_stats(&self) -> ExitStats {
        let mut exited_mass = 0.0;
        let mut sum = 0.0;
        let mut unexited_mass = 0.0;
        for (tr, w) in self.trajectories.iter().zip(&self.weights) {
            if tr.has_exited() {
                exited_mass += w;
                sum += w * tr.exit_time();
            } else {
                unexited_mass += w;
            }
        }
        ExitStats {
            mean_exit_time: if exited_mass > 0.0 { sum / exited_mass } else { 0.0 },
            exited_mass,
            unexited_mass,
        }
    }
}

/// Summary of a bundle's arrival behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitStats {
    /// Mean exit time over the mass that exited.
    pub mean_exit_time: f64,
    pub exited_mass: f64,
    pub unexited_mass: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line_path() -> PolylineTrajectory {
        // Walks from (0,0) to (1,0) in four steps of dt = 0.5, then stays.
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.25, 0.0],
            vec![0.5, 0.0],
            vec![0.75, 0.0],
            vec![1.0, 0.0],
        ];
        PolylineTrajectory::new(0.0, 0.5, pts, 2.0).unwrap()
    }

    #[test]
    fn position_interpolates_and_clamps() {
        let p = line_path();
        assert_abs_diff_eq!(p.position_vec(-1.0)[0], 0.0);
        assert_abs_diff_eq!(p.position_vec(0.75)[0], 0.375, epsilon = 1e-12);
        assert_abs_diff_eq!(p.position_vec(2.0)[0], 1.0);
        assert_abs_diff_eq!(p.position_vec(55.0)[0], 1.0);
        assert_abs_diff_eq!(p.max_step_length(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn constant_path_stays_put() {
        let p = PolylineTrajectory::constant(vec![3.0, -1.0], 0.1, 11, f64::INFINITY).unwrap();
        assert!(!p.has_exited());
        assert_eq!(p.position_vec(0.35), vec![3.0, -1.0]);
    }

    #[test]
    fn bundle_rejects_mixed_grids() {
        let a = PolylineTrajectory::constant(vec![0.0], 0.1, 5, 0.0).unwrap();
        let b = PolylineTrajectory::constant(vec![1.0], 0.2, 5, 0.0).unwrap();
        let r = TrajectoryBundle::new(vec![a, b], vec![0.5, 0.5]);
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }

    #[test]
    fn measure_at_carries_weights() {
        let a = PolylineTrajectory::constant(vec![0.0], 0.1, 5, 0.0).unwrap();
        let b = PolylineTrajectory::constant(vec![1.0], 0.1, 5, f64::INFINITY).unwrap();
        let bundle = TrajectoryBundle::new(vec![a, b], vec![0.25, 0.75]).unwrap();
        let m = bundle.measure_at(0.3);
        assert_eq!(m.len(), 2);
        assert_abs_diff_eq!(m.weights()[1], 0.75);
        let stats = bundle.exit_stats();
        assert_abs_diff_eq!(stats.exited_mass, 0.25);
        assert_abs_diff_eq!(stats.unexited_mass, 0.75);
    }

    #[test]
    fn mixture_weights_sum_to_one() {
        let a = TrajectoryBundle::equal_weights(vec![
            PolylineTrajectory::constant(vec![0.0], 0.1, 3, 0.0).unwrap(),
        ])
        .unwrap();
        let b = TrajectoryBundle::equal_weights(vec![
            PolylineTrajectory::constant(vec![1.0], 0.1, 3, 0.0).unwrap(),
            PolylineTrajectory::constant(vec![2.0], 0.1, 3, 0.0).unwrap(),
        ])
        .unwrap();
        let m = TrajectoryBundle::mixture(&a, &b, 0.25).unwrap();
        assert_eq!(m.len(), 3);
        assert_abs_diff_eq!(m.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.weights()[0], 0.75, epsilon = 1e-12);
    }
}
