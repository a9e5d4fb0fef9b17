//! Target-set geometry: unions of balls, boxes and tolerant point clouds,
//! their distance functions, and worst-case reach bounds.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom;
use crate::Result;

/// One building block of a target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPrimitive {
    /// Closed Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned closed box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Finite point cloud, thickened by `tolerance` (default 0).
    Points {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        tolerance: f64,
    },
}

impl TargetPrimitive {
    fn dim(&self) -> usize {
        match self {
            TargetPrimitive::Ball { center, .. } => center.len(),
            TargetPrimitive::Box { lo, .. } => lo.len(),
            TargetPrimitive::Points { points, .. } => {
                points.first().map_or(0, |p| p.len())
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let check_dim = |v: &[f64]| -> Result<()> {
            if v.len() != dim {
                Err(Error::DimensionMismatch { expected: dim, got: v.len() })
            } else {
                Ok(())
            }
        };
        match self {
            TargetPrimitive::Ball { center, radius } => {
                check_dim(center)?;
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "radius",
                        reason: format!("must be >= 0, got {radius}"),
                    });
                }
            }
            TargetPrimitive::Box { lo, hi } => {
                check_dim(lo)?;
                check_dim(hi)?;
                if lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::InvalidParameter {
                        name: "box",
                        reason: "lower corner exceeds upper corner".into(),
                    });
                }
            }
            TargetPrimitive::Points { points, tolerance } => {
                if points.is_empty() {
                    return Err(Error::InvalidParameter {
                        name: "points",
                        reason: "point-cloud primitive needs at least one point".into(),
                    });
                }
                for p in points {
                    check_dim(p)?;
                }
                if !(*tolerance >= 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "tolerance",
                        reason: format!("must be >= 0, got {tolerance}"),
                    });
                }
            }
        }
        Ok(())
    }

    fn distance(&self, x: &[f64]) -> f64 {
        match self {
            TargetPrimitive::Ball { center, radius } => {
                (geom::dist(x, center) - radius).max(0.0)
            }
            TargetPrimitive::Box { lo, hi } => {
                let mut s = 0.0;
                for i in 0..x.len() {
                    let d = (lo[i] - x[i]).max(x[i] - hi[i]).max(0.0);
                    s += d * d;
                }
                s.sqrt()
            }
            TargetPrimitive::Points { points, tolerance } => {
                let d = points
                    .iter()
                    .map(|p| geom::dist(x, p))
                    .fold(f64::INFINITY, f64::min);
                (d - tolerance).max(0.0)
            }
        }
    }
}

/// A nonempty closed target set: the union of its primitives.
///
/// The distance function is the pointwise minimum of the primitive
/// distances, hence 1-Lipschitz, and vanishes exactly on the set.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    dim: usize,
    primitives: Vec<TargetPrimitive>,
}

impl TargetSet {
    /// Builds a target set from at least one primitive with consistent
    /// dimensions.
    pub fn new(primitives: Vec<TargetPrimitive>) -> Result<Self> {
        let dim = primitives
            .first()
            .map(|p| p.dim())
            .ok_or(Error::InvalidParameter {
                name: "target",
                reason: "target set must be nonempty".into(),
            })?;
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        for p in &primitives {
            p.validate(dim)?;
        }
        Ok(Self { dim, primitives })
    }

    /// Single ball helper.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(vec![TargetPrimitive::Ball { center, radius }])
    }

    /// Single point helper (zero tolerance).
    pub fn point(p: Vec<f64>) -> Result<Self> {
        Self::new(vec![TargetPrimitive::Points { points: vec![p], tolerance: 0.0 }])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn primitives(&self) -> &[TargetPrimitive] {
        &self.primitives
    }

    /// Euclidean distance from `x` to the set; 0 iff `x` belongs to it.
    pub fn distance(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.primitives
            .iter()
            .map(|p| p.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Membership test (distance exactly zero up to float noise).
    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) <= 1e-12
    }
}

/// Worst-case bounds for reaching `target` from the ball of radius `r`:
/// returns `(t_bound, reach_radius)`.
///
/// `t_bound` is the exit-time bound `(r + d0) / k_min` obtained by walking
/// at the slowest admissible speed from the start to the origin and on to
/// the nearest target point (`d0` = distance from the origin to the set).
/// `reach_radius = r + k_max * t_bound` bounds how far any time-optimal
/// trajectory started in the ball can stray before exiting.
pub fn reach_bounds(target: &TargetSet, k_min: f64, k_max: f64, r: f64) -> Result<(f64, f64)> {
    if !(k_min > 0.0) {
        return Err(Error::InvalidParameter {
            name: "k_min",
            reason: format!("must be > 0, got {k_min}"),
        });
    }
    if !(k_max >= k_min) {
        return Err(Error::InvalidParameter {
            name: "k_max",
            reason: format!("must be >= k_min = {k_min}, got {k_max}"),
        });
    }
    if !(r >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "r",
            reason: format!("must be >= 0, got {r}"),
        });
    }
    let origin = vec![0.0; target.dim()];
    let d0 = target.distance(&origin);
    let t_bound = (r + d0) / k_min;
    Ok((t_bound, r + k_max * t_bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ball_distance_from_outside_and_inside() {
        let t = TargetSet::ball(vec![2.0, 0.0], 0.5).unwrap();
        assert_abs_diff_eq!(t.distance(&[0.0, 0.0]), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.distance(&[2.2, 0.0]), 0.0, epsilon = 1e-12);
        assert!(t.contains(&[2.4, 0.0]));
        assert!(!t.contains(&[2.6, 0.0]));
    }

    #[test]
    fn box_distance_is_componentwise() {
        let t = TargetSet::new(vec![TargetPrimitive::Box {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        }])
        .unwrap();
        assert_abs_diff_eq!(t.distance(&[0.5, 0.5]), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.distance(&[2.0, 0.5]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.distance(&[2.0, 2.0]), 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn point_cloud_tolerance_thickens_the_set() {
        let t = TargetSet::new(vec![TargetPrimitive::Points {
            points: vec![vec![1.0], vec![-1.0]],
            tolerance: 0.25,
        }])
        .unwrap();
        assert_abs_diff_eq!(t.distance(&[0.0]), 0.75, epsilon = 1e-12);
        assert!(t.contains(&[0.8]));
    }

    #[test]
    fn union_takes_minimum_distance() {
        let t = TargetSet::new(vec![
            TargetPrimitive::Ball { center: vec![3.0, 0.0], radius: 1.0 },
            TargetPrimitive::Points { points: vec![vec![0.0, 1.0]], tolerance: 0.0 },
        ])
        .unwrap();
        assert_abs_diff_eq!(t.distance(&[0.0, 0.0]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_is_one_lipschitz() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let t = TargetSet::new(vec![
            TargetPrimitive::Ball { center: vec![1.0, -0.5], radius: 0.3 },
            TargetPrimitive::Box { lo: vec![-2.0, -2.0], hi: vec![-1.0, -1.0] },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let a = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let b = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let lhs = (t.distance(&a) - t.distance(&b)).abs();
            assert!(lhs <= geom::dist(&a, &b) + 1e-12);
        }
    }

    #[test]
    fn reach_bounds_match_hand_computation() {
        // Ball target at distance 1.5 from the origin, speeds in [1, 2]:
        // from radius 1, t_bound = (1 + 1.5) / 1 = 2.5 and the trajectory
        // stays within 1 + 2 * 2.5 = 6.
        let t = TargetSet::ball(vec![2.0, 0.0], 0.5).unwrap();
        let (t_bound, reach) = reach_bounds(&t, 1.0, 2.0, 1.0).unwrap();
        assert_abs_diff_eq!(t_bound, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(reach, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn reach_bounds_monotone_in_radius() {
        let t = TargetSet::point(vec![1.0, 1.0]).unwrap();
        let (t1, p1) = reach_bounds(&t, 0.5, 1.5, 1.0).unwrap();
        let (t2, p2) = reach_bounds(&t, 0.5, 1.5, 2.0).unwrap();
        assert!(t2 > t1);
        assert!(p2 > p1);
    }

    #[test]
    fn reach_bounds_reject_bad_speeds() {
        let t = TargetSet::point(vec![0.0]).unwrap();
        assert!(reach_bounds(&t, 0.0, 1.0, 1.0).is_err());
        assert!(reach_bounds(&t, 2.0, 1.0, 1.0).is_err());
        assert!(reach_bounds(&t, 1.0, 2.0, -1.0).is_err());
    }

    #[test]
    fn empty_target_rejected() {
        assert!(TargetSet::new(vec![]).is_err());
    }
}
