//! Weighted atomic measures on R^d.

use crate::defaults::WEIGHT_SUM_TOL;
use crate::error::Error;
use crate::geom;
use crate::Result;

/// A finitely supported probability measure: atoms with nonnegative weights
/// summing to one.
///
/// The zero-atom case is allowed and represents the zero measure; it is the
/// convention used for the cross-population average when there is a single
/// population.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure, validating dimensions and weights.
    ///
    /// Weights must be nonnegative and sum to one within
    /// [`WEIGHT_SUM_TOL`]; the stored weights are not rescaled.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} atoms but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidWeights(
                "empty atom list; use EmpiricalMeasure::zero for the zero measure".into(),
            ));
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
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("negative or non-finite weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(Self { dim, points, weights })
    }

    /// Equal-weight atoms at the given points.
    pub fn equal_weights(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidWeights("cannot weight zero atoms".into()));
        }
        let w = vec![1.0 / n as f64; n];
        Self::new(points, w)
    }

    /// The zero measure in dimension `dim` (no atoms, total mass 0).
    pub fn zero(dim: usize) -> Self {
        Self { dim, points: Vec::new(), weights: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total mass: 1 for a proper measure, 0 for the zero measure.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mass inside the closed ball of radius `r` centered at the origin.
    pub fn mass_within(&self, r: f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| geom::norm(p) <= r + 1e-12)
            .map(|(_, w)| w)
            .sum()
    }

    /// Radius of the smallest origin-centered ball containing all atoms.
    pub fn support_radius(&self) -> f64 {
        self.points.iter().map(|p| geom::norm(p)).fold(0.0, f64::max)
    }

    /// Merges atoms with bit-identical coordinates, summing weights.
    /// Order follows first occurrence, so the result is deterministic.
    pub fn collapse_duplicates(&self) -> Self {
        use std::collections::HashMap;
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut points = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (p, w) in self.points.iter().zip(&self.weights) {
            let key: Vec<u64> = p.iter().map(|c| c.to_bits()).collect();
            match index.get(&key) {
                Some(&i) => weights[i] += w,
                None => {
                    index.insert(key, points.len());
                    points.push(p.clone());
                    weights.push(*w);
                }
            }
        }
        Self { dim: self.dim, points, weights }
    }
}

/// Smallest mass any of the given initial measures places in the closed
/// origin-centered ball of radius `r`.
///
/// This profile is nondecreasing in `r` and reaches 1 once `r` covers every
/// support; it is the guaranteed fraction of each population that can be
/// confined a priori, used by the support-bound diagnostic.
pub fn support_profile(measures: &[EmpiricalMeasure], r: f64) -> f64 {
    measures
        .iter()
        .map(|m| m.mass_within(r))
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_negative_weights() {
        let r = EmpiricalMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]);
        assert!(matches!(r, Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn rejects_unnormalized_weights() {
        let r = EmpiricalMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.6, 0.6]);
        assert!(matches!(r, Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let r = EmpiricalMeasure::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_measure_has_no_mass() {
        let z = EmpiricalMeasure::zero(2);
        assert_eq!(z.len(), 0);
        assert_eq!(z.total_mass(), 0.0);
        assert_eq!(z.mass_within(10.0), 0.0);
    }

    #[test]
    fn mass_within_counts_closed_ball() {
        let m = EmpiricalMeasure::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]],
            vec![0.2, 0.3, 0.5],
        )
        .unwrap();
        assert_abs_diff_eq!(m.mass_within(0.0), 0.2);
        assert_abs_diff_eq!(m.mass_within(1.0), 0.5);
        assert_abs_diff_eq!(m.mass_within(2.0), 1.0);
        assert_abs_diff_eq!(m.support_radius(), 2.0);
    }

    #[test]
    fn duplicate_collapse_sums_weights() {
        let m = EmpiricalMeasure::new(
            vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 0.0]],
            vec![0.25, 0.25, 0.5],
        )
        .unwrap();
        let c = m.collapse_duplicates();
        assert_eq!(c.len(), 2);
        assert_abs_diff_eq!(c.weights()[0], 0.5);
        assert_abs_diff_eq!(c.total_mass(), 1.0);
    }

    #[test]
    fn support_profile_is_min_over_populations() {
        let a = EmpiricalMeasure::new(vec![vec![0.0], vec![3.0]], vec![0.5, 0.5]).unwrap();
        let b = EmpiricalMeasure::new(vec![vec![1.0]], vec![1.0]).unwrap();
        // At r = 0.5 population a holds 0.5, population b holds 0.
        assert_abs_diff_eq!(support_profile(&[a.clone(), b.clone()], 0.5), 0.0);
        // At r = 1 population a holds 0.5, population b holds 1.
        assert_abs_diff_eq!(support_profile(&[a.clone(), b.clone()], 1.0), 0.5);
        assert_abs_diff_eq!(support_profile(&[a, b], 3.0), 1.0);
    }

    #[test]
    fn support_profile_monotone_in_radius() {
        let a = EmpiricalMeasure::new(
            vec![vec![0.2, 0.1], vec![-0.7, 0.3], vec![1.4, -1.0]],
            vec![0.3, 0.4, 0.3],
        )
        .unwrap();
        let mut prev = 0.0;
        for k in 0..30 {
            let r = 0.1 * k as f64;
            let v = support_profile(&[a.clone()], r);
            assert!(v + 1e-15 >= prev, "profile decreased at r = {r}");
            prev = v;
        }
    }
}
