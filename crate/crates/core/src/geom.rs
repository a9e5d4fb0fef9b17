//! Small d-dimensional vector helpers and unit-direction sampling.
//!
//! Points are plain `&[f64]` slices; the ambient dimension is a runtime
//! value.  Hot loops write into caller-provided buffers to avoid per-step
//! allocation.

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean distance between two points of equal dimension.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Writes `x + s * u` into `out`.
pub fn axpy(out: &mut [f64], x: &[f64], s: f64, u: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    debug_assert_eq!(out.len(), u.len());
    for i in 0..out.len() {
        out[i] = x[i] + s * u[i];
    }
}

/// Angle in radians between two nonzero vectors, in [0, pi].
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let c = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    c.acos()
}

/// `m` unit directions covering the sphere in dimension `d`.
///
/// * d = 1: the two signs (regardless of `m`);
/// * d = 2: `m` equally spaced angles starting at the positive x-axis;
/// * d >= 3: a Fibonacci-style spiral on S^{d-1} (deterministic), built by
///   lifting the 2-d spiral through cylindrical coordinates for d = 3 and a
///   fixed low-discrepancy rotation for higher d.
pub fn unit_directions(d: usize, m: usize) -> Vec<Vec<f64>> {
    assert!(d >= 1, "dimension must be at least 1");
    assert!(m >= 1, "need at least one direction");
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..m)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci sphere: near-uniform, deterministic.
            let phi = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            (0..m)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / m as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = phi * j as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        _ => {
            // Deterministic low-discrepancy directions: normalize points of
            // an additive (Kronecker) sequence mapped through the inverse
            // normal CDF would be overkill; spherical uniformity at this
            // accuracy is not needed for d > 3, which is untested territory.
            // Use a fixed-seed generator so results are reproducible.
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            use rand_distr::StandardNormal;
            let mut rng = ChaCha8Rng::seed_from_u64(0x_d1f_ec7);
            (0..m)
                .map(|_| {
                    loop {
                        let v: Vec<f64> =
                            (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        let n = norm(&v);
                        if n > 1e-9 {
                            return v.iter().map(|c| c / n).collect();
                        }
                    }
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn directions_are_unit_norm() {
        for d in 1..=4 {
            for u in unit_directions(d, 16) {
                assert_abs_diff_eq!(norm(&u), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn one_dimensional_directions_are_signs() {
        assert_eq!(unit_directions(1, 64), vec![vec![1.0], vec![-1.0]]);
    }

    #[test]
    fn planar_directions_are_equally_spaced() {
        let dirs = unit_directions(2, 8);
        assert_eq!(dirs.len(), 8);
        assert_abs_diff_eq!(dirs[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dirs[2][1], 1.0, epsilon = 1e-12);
        for w in dirs.windows(2) {
            assert_abs_diff_eq!(
                angle_between(&w[0], &w[1]),
                std::f64::consts::PI / 4.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn angle_is_symmetric_and_bounded() {
        let a = [1.0, 0.0];
        let b = [0.0, 2.0];
        assert_abs_diff_eq!(angle_between(&a, &b), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_between(&b, &a), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }
}
