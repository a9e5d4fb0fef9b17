//! Exact discrete optimal transport, pushforward measures and the
//! trajectory-space metric.
//!
//! Wasserstein distances between atomic measures are computed exactly with
//! a transportation-problem network simplex (spanning-tree basis, block
//! pricing, Bland fallback against degenerate cycling).  For order p = 1 a
//! reduced solver cancels mass shared by both measures first — justified by
//! Kantorovich–Rubinstein duality, under which `W1` depends only on the
//! difference of the measures — which collapses the problem dramatically
//! when the inputs overlap.

use crate::error::Error;
use crate::geom;
use crate::measure::EmpiricalMeasure;
use crate::trajectory::{PolylineTrajectory, TrajectoryBundle};
use crate::Result;

/// An optimal coupling between two atomic measures.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// `(source atom, sink atom, shipped mass)`, mass > 0.
    pub entries: Vec<(usize, usize, f64)>,
    /// Total cost `sum f_ij |x_i - y_j|^p`.
    pub cost: f64,
    /// Order of the distance.
    pub p: f64,
}

impl TransportPlan {
    /// Row sums (source marginal).
    pub fn source_marginal(&self, n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n];
        for &(i, _, f) in &self.entries {
            m[i] += f;
        }
        m
    }

    /// Column sums (sink marginal).
    pub fn sink_marginal(&self, n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n];
        for &(_, j, f) in &self.entries {
            m[j] += f;
        }
        m
    }
}

/// Exact Wasserstein distance of order `p >= 1` between two atomic
/// probability measures, with an optimal plan.
pub fn wasserstein(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
) -> Result<(f64, TransportPlan)> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("order must be >= 1, got {p}"),
        });
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::InvalidParameter {
            name: "measure",
            reason: "cannot transport the zero measure".into(),
        });
    }
    if (mu.total_mass() - nu.total_mass()).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!(
            "unequal total masses {} vs {}",
            mu.total_mass(),
            nu.total_mass()
        )));
    }
    let pow = |d: f64| -> f64 {
        if p == 1.0 {
            d
        } else if p == 2.0 {
            d * d
        } else {
            d.powf(p)
        }
    };
    // Pricing scans arcs many times; a dense cost matrix is worth its
    // memory up to a few million entries.
    let (m, n) = (mu.len(), nu.len());
    let (total, flows) = if m * n <= 8_000_000 {
        let mat: Vec<f64> = (0..m * n)
            .map(|a| pow(geom::dist(&mu.points()[a / n], &nu.points()[a % n])))
            .collect();
        solve_transportation(mu.weights(), nu.weights(), &|i, j| mat[i * n + j])?
    } else {
        let cost =
            |i: usize, j: usize| pow(geom::dist(&mu.points()[i], &nu.points()[j]));
        solve_transportation(mu.weights(), nu.weights(), &cost)?
    };
    let distance = if p == 1.0 { total } else { total.max(0.0).powf(1.0 / p) };
    Ok((distance, TransportPlan { entries: flows, cost: total, p }))
}

/// Exact `W1` between probability measures via the difference-measure
/// reduction (no plan; fast when the measures overlap).
pub fn w1_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::InvalidParameter {
            name: "measure",
            reason: "cannot transport the zero measure".into(),
        });
    }
    // Net weight per distinct position, in first-occurrence order.
    use std::collections::HashMap;
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut positions: Vec<&[f64]> = Vec::new();
    let mut net: Vec<f64> = Vec::new();
    let sides = [
        (mu.points(), mu.weights(), 1.0),
        (nu.points(), nu.weights(), -1.0),
    ];
    for (pts, ws, sign) in sides {
        for (pt, w) in pts.iter().zip(ws) {
            let key: Vec<u64> = pt.iter().map(|c| c.to_bits()).collect();
            match index.get(&key) {
                Some(&i) => net[i] += sign * w,
                None => {
                    index.insert(key, positions.len());
                    positions.push(pt.as_slice());
                    net.push(sign * w);
                }
            }
        }
    }

    let mut src_pts: Vec<&[f64]> = Vec::new();
    let mut src_w: Vec<f64> = Vec::new();
    let mut snk_pts: Vec<&[f64]> = Vec::new();
    let mut snk_w: Vec<f64> = Vec::new();
    for (pos, w) in positions.iter().zip(&net) {
        if *w > 1e-15 {
            src_pts.push(pos);
            src_w.push(*w);
        } else if *w < -1e-15 {
            snk_pts.push(pos);
            snk_w.push(-*w);
        }
    }
    if src_pts.is_empty() || snk_pts.is_empty() {
        return Ok(0.0);
    }
    // Remove the residual mass imbalance left by float cancellation.
    let sa: f64 = src_w.iter().sum();
    let sb: f64 = snk_w.iter().sum();
    let scale = sa / sb;
    for w in &mut snk_w {
        *w *= scale;
    }
    let (m, n) = (src_pts.len(), snk_pts.len());
    let (total, _) = if m * n <= 8_000_000 {
        let mat: Vec<f64> = (0..m * n)
            .map(|a| geom::dist(src_pts[a / n], snk_pts[a % n]))
            .collect();
        solve_transportation(&src_w, &snk_w, &|i, j| mat[i * n + j])?
    } else {
        let cost = |i: usize, j: usize| geom::dist(src_pts[i], snk_pts[j]);
        solve_transportation(&src_w, &snk_w, &cost)?
    };
    Ok(total)
}

/// Distribution of bundle positions at time `t` (must lie within the
/// discretized horizon).
pub fn pushforward_at(bundle: &TrajectoryBundle, t: f64) -> Result<EmpiricalMeasure> {
    let t_last = (bundle.n_nodes() - 1) as f64 * bundle.dt();
    if t < -1e-9 || t > t_last + 1e-9 {
        return Err(Error::OutOfDomain(format!(
            "time {t} outside trajectory horizon [0, {t_last}]"
        )));
    }
    Ok(bundle.measure_at(t))
}

/// Metric on trajectory space: a discounted sum over horizons `n = 1, 2, …`
/// of the bounded sup-distance `s_n / (1 + s_n)`, where `s_n` is the sup
/// distance on `[0, n]`.
///
/// The sum is truncated at `n_max = ceil(t_last)`; because discretized
/// trajectories are constant past their last node, the tail equals
/// `2^-n_max * s/(1+s)` exactly and is included, so the value is exact.
pub fn trajectory_metric(a: &PolylineTrajectory, b: &PolylineTrajectory) -> Result<f64> {
    if a.dt() != b.dt() || a.n_nodes() != b.n_nodes() {
        return Err(Error::GridMismatch(format!(
            "trajectory grids differ: ({}, {}) vs ({}, {})",
            a.dt(),
            a.n_nodes(),
            b.dt(),
            b.n_nodes()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let dt = a.dt();
    let n_max = metric_horizon(a);
    let mut value = 0.0;
    let mut sup: f64 = 0.0;
    let mut node = 0usize;
    let n_nodes = a.n_nodes();
    for n in 1..=n_max {
        let t_cap = n as f64 + 1e-9;
        while node < n_nodes && (node as f64) * dt <= t_cap {
            let d = geom::dist(&a.points()[node], &b.points()[node]);
            sup = sup.max(d);
            node += 1;
        }
        value += 0.5f64.powi(n as i32) * sup / (1.0 + sup);
    }
    // Both paths are constant after their last node, so every later
    // horizon contributes the same bounded distance.
    value += 0.5f64.powi(n_max as i32) * sup / (1.0 + sup);
    Ok(value)
}

/// Truncation horizon used by [`trajectory_metric`] and the a-priori bound
/// `2^-n_max` on what an untruncated tail could contribute.
pub fn metric_truncation_bound(a: &PolylineTrajectory) -> f64 {
    0.5f64.powi(metric_horizon(a) as i32)
}

fn metric_horizon(a: &PolylineTrajectory) -> usize {
    (a.t_last() - 1e-9).ceil().max(1.0) as usize
}

// ---------------------------------------------------------------------------
// Transportation-problem network simplex.
// ---------------------------------------------------------------------------

/// Solves `min sum f_ij c(i, j)` subject to row sums `supply`, column sums
/// `demand`, `f >= 0`.  Supplies and demands must be nonnegative with equal
/// totals (any positive scale).  Returns the optimal cost and the nonzero
/// flows.
pub fn solve_transportation<C: Fn(usize, usize) -> f64>(
    supply: &[f64],
    demand: &[f64],
    cost: &C,
) -> Result<(f64, Vec<(usize, usize, f64)>)> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter {
            name: "supply/demand",
            reason: "empty side".into(),
        });
    }
    let ta: f64 = supply.iter().sum();
    let tb: f64 = demand.iter().sum();
    if (ta - tb).abs() > 1e-9 * ta.max(tb).max(1.0) {
        return Err(Error::InvalidWeights(format!("unbalanced totals {ta} vs {tb}")));
    }
    // Single-row / single-column shortcuts.
    if m == 1 {
        let mut flows = Vec::with_capacity(n);
        let mut total = 0.0;
        for (j, &b) in demand.iter().enumerate() {
            if b > 0.0 {
                flows.push((0, j, b));
                total += b * cost(0, j);
            }
        }
        return Ok((total, flows));
    }
    if n == 1 {
        let mut flows = Vec::with_capacity(m);
        let mut total = 0.0;
        for (i, &a) in supply.iter().enumerate() {
            if a > 0.0 {
                flows.push((i, 0, a));
                total += a * cost(i, 0);
            }
        }
        return Ok((total, flows));
    }
    let mut s = SimplexState::northwest(supply, demand, cost);
    s.optimize(cost)?;
    Ok(s.extract(cost))
}

/// Spanning-tree state: nodes `0..m` are sources, `m..m + n` sinks.
struct SimplexState {
    m: usize,
    n: usize,
    parent: Vec<usize>,
    /// Flow on the arc from each node to its parent (root: unused).
    flow_up: Vec<f64>,
    children: Vec<Vec<usize>>,
    /// Node potentials; a basic arc (i, j) satisfies pot[i] + pot[m+j] = c_ij.
    pot: Vec<f64>,
    root: usize,
    /// Scratch stamp for cycle detection.
    mark: Vec<u32>,
    stamp: u32,
    tol: f64,
}

impl SimplexState {
    /// Northwest-corner initial basic solution, rooted at source 0.
    fn northwest<C: Fn(usize, usize) -> f64>(supply: &[f64], demand: &[f64], cost: &C) -> Self {
        let m = supply.len();
        let n = demand.len();
        let total = m + n;
        let mut parent = vec![usize::MAX; total];
        let mut flow_up = vec![0.0; total];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); total];
        let mut rem_a = supply.to_vec();
        let mut rem_b = demand.to_vec();

        // The staircase of basic arcs forms a path; orient it as a tree
        // rooted at source 0 by always hanging the newly reached node on
        // the previously active one.
        let root = 0usize;
        let (mut i, mut j) = (0usize, 0usize);
        // Tracks which side was reached last: the first arc hangs sink 0
        // below source 0.
        let mut attach_sink_below_source = true;
        loop {
            let f = rem_a[i].min(rem_b[j]).max(0.0);
            let (snode, tnode) = (i, m + j);
            if attach_sink_below_source {
                parent[tnode] = snode;
                flow_up[tnode] = f;
                children[snode].push(tnode);
            } else {
                parent[snode] = tnode;
                flow_up[snode] = f;
                children[tnode].push(snode);
            }
            rem_a[i] -= f;
            rem_b[j] -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            // Advance the exhausted side; ties advance the source first so
            // a zero-flow arc keeps the basis a spanning tree.  The last
            // row/column can only advance the other index.
            if (rem_a[i] <= rem_b[j] && i < m - 1) || j == n - 1 {
                i += 1;
                attach_sink_below_source = false; // next arc hangs source below current sink
            } else {
                j += 1;
                attach_sink_below_source = true;
            }
        }
        parent[root] = root;

        let mut state = Self {
            m,
            n,
            parent,
            flow_up,
            children,
            pot: vec![0.0; total],
            root,
            mark: vec![0; total],
            stamp: 0,
            tol: 0.0,
        };
        state.recompute_potentials(cost);
        // Optimality tolerance scaled to the cost magnitude seen on the
        // initial basis (cheap proxy for the overall scale).
        let scale = state
            .pot
            .iter()
            .fold(0.0f64, |acc, p| acc.max(p.abs()))
            .max(1.0);
        state.tol = 1e-12 * scale;
        state
    }

    fn recompute_potentials<C: Fn(usize, usize) -> f64>(&mut self, cost: &C) {
        let mut stack = vec![self.root];
        self.pot[self.root] = 0.0;
        while let Some(v) = stack.pop() {
            for &c in &self.children[v] {
                self.pot[c] = self.arc_cost(v, c, cost) - self.pot[v];
                stack.push(c);
            }
        }
    }

    /// Cost of the arc between adjacent tree nodes (one source, one sink).
    fn arc_cost<C: Fn(usize, usize) -> f64>(&self, a: usize, b: usize, cost: &C) -> f64 {
        let (i, j) = if a < self.m { (a, b - self.m) } else { (b, a - self.m) };
        cost(i, j)
    }

    fn optimize<C: Fn(usize, usize) -> f64>(&mut self, cost: &C) -> Result<()> {
        let m = self.m;
        let n = self.n;
        let arcs = m * n;
        let block = (arcs as f64).sqrt().ceil() as usize * 4;
        let block = block.clamp(64, arcs.max(64));
        let mut cursor = 0usize;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let pivot_cap = 200 * (m + n) + 100_000;
        let mut pivots = 0usize;

        loop {
            // Pricing: best arc in successive blocks (or first negative
            // under Bland's rule once degeneracy sets in).
            let mut entering: Option<(usize, usize, f64)> = None;
            let mut scanned = 0usize;
            while scanned < arcs {
                let hi = (cursor + block).min(cursor + arcs - scanned);
                let mut best: Option<(usize, usize, f64)> = None;
                for a in cursor..hi {
                    let idx = a % arcs;
                    let (i, j) = (idx / n, idx % n);
                    let rc = cost(i, j) - self.pot[i] - self.pot[m + j];
                    if rc < -self.tol {
                        if bland {
                            best = Some((i, j, rc));
                            break;
                        }
                        match best {
                            Some((_, _, b)) if b <= rc => {}
                            _ => best = Some((i, j, rc)),
                        }
                    }
                }
                scanned += hi - cursor;
                cursor = hi % arcs;
                if best.is_some() {
                    entering = best;
                    break;
                }
            }
            let Some((ei, ej, rc)) = entering else {
                return Ok(());
            };

            let theta = self.pivot(ei, m + ej, rc);
            pivots += 1;
            if theta <= 1e-15 {
                degenerate_run += 1;
                if degenerate_run > 2000 {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            if pivots > pivot_cap {
                return Err(Error::NoConvergence { iterations: pivots, residual: rc.abs() });
            }
        }
    }

    /// Performs one pivot with entering arc `(es, et)` (source node, sink
    /// node) of reduced cost `rc`; returns the flow change.
    fn pivot(&mut self, es: usize, et: usize, rc: f64) -> f64 {
        // Mark ancestors of es, then walk up from et to the first marked
        // node: that is the apex of the cycle.
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.mark.fill(0);
            self.stamp = 1;
        }
        let mut v = es;
        loop {
            self.mark[v] = self.stamp;
            if v == self.root {
                break;
            }
            v = self.parent[v];
        }
        let mut apex = et;
        while self.mark[apex] != self.stamp {
            apex = self.parent[apex];
        }

        // Flow decreases on every second arc of each leg, starting with
        // the arcs adjacent to the entering one.
        let theta_leg = |state: &SimplexState, start: usize| -> (f64, usize) {
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            let mut v = start;
            let mut decreasing = true;
            while v != apex {
                if decreasing && state.flow_up[v] < best {
                    best = state.flow_up[v];
                    arg = v;
                }
                decreasing = !decreasing;
                v = state.parent[v];
            }
            (best, arg)
        };
        let (th_a, arg_a) = theta_leg(self, es);
        let (th_b, arg_b) = theta_leg(self, et);
        let theta = th_a.min(th_b).max(0.0);
        // Leaving arc: the tightest decreasing arc; prefer the es-leg on
        // exact ties for determinism.
        let (leave_child, leave_on_es_leg) =
            if th_a <= th_b { (arg_a, true) } else { (arg_b, false) };
        debug_assert!(leave_child != usize::MAX);

        // Apply the flow change along both legs.
        let apply = |state: &mut SimplexState, start: usize| {
            let mut v = start;
            let mut decreasing = true;
            while v != apex {
                if decreasing {
                    state.flow_up[v] -= theta;
                } else {
                    state.flow_up[v] += theta;
                }
                decreasing = !decreasing;
                v = state.parent[v];
            }
        };
        apply(self, es);
        apply(self, et);

        // Detach the leaving arc and re-hang the cut subtree from the
        // entering arc.  The subtree containing `leave_child` also contains
        // exactly one endpoint of the entering arc: the one on the same leg.
        let (sub_end, other_end) =
            if leave_on_es_leg { (es, et) } else { (et, es) };
        let old_parent = self.parent[leave_child];
        self.children[old_parent].retain(|&c| c != leave_child);
        self.parent[leave_child] = leave_child; // temporarily a root

        // Reverse parent pointers on the path sub_end -> leave_child.  The
        // arc between chain[k] and chain[k+1] was stored on the child side
        // (chain[k]); after reversal it lives on chain[k+1], so snapshot
        // the flows before overwriting anything.
        let mut chain = Vec::new();
        let mut v = sub_end;
        loop {
            chain.push(v);
            if v == leave_child {
                break;
            }
            v = self.parent[v];
        }
        let old_flows: Vec<f64> = chain.iter().map(|&v| self.flow_up[v]).collect();
        for (k, w) in chain.windows(2).enumerate() {
            let (child, par) = (w[0], w[1]);
            // par becomes the child of child.
            self.children[par].retain(|&c| c != child);
            self.parent[par] = child;
            self.flow_up[par] = old_flows[k];
            self.children[child].push(par);
        }
        self.parent[sub_end] = other_end;
        self.flow_up[sub_end] = theta;
        self.children[other_end].push(sub_end);

        // Potentials in the re-hung subtree shift by ±rc: nodes of the same
        // side (source/sink) as `sub_end` move by +rc, the others by -rc.
        let sub_is_source = sub_end < self.m;
        let mut stack = vec![sub_end];
        while let Some(v) = stack.pop() {
            let same_side = (v < self.m) == sub_is_source;
            self.pot[v] += if same_side { rc } else { -rc };
            for &c in &self.children[v] {
                stack.push(c);
            }
        }
        theta
    }

    /// Reads the optimal flows off the tree.
    fn extract<C: Fn(usize, usize) -> f64>(&self, cost: &C) -> (f64, Vec<(usize, usize, f64)>) {
        let mut flows = Vec::new();
        let mut total = 0.0;
        for v in 0..self.m + self.n {
            if v == self.root {
                continue;
            }
            let f = self.flow_up[v];
            if f > 0.0 {
                let p = self.parent[v];
                let (i, j) = if v < self.m { (v, p - self.m) } else { (p, v - self.m) };
                flows.push((i, j, f));
                total += f * cost(i, j);
            }
        }
        flows.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        (total, flows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults::MARGINAL_TOL;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn measure(points: Vec<Vec<f64>>, weights: Vec<f64>) -> EmpiricalMeasure {
        EmpiricalMeasure::new(points, weights).unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmpiricalMeasure {
        let points = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        for x in &mut w {
            *x /= s;
        }
        // Absorb rounding into the last weight so the sum is exactly 1.
        let last = w.len() - 1;
        w[last] += 1.0 - w.iter().sum::<f64>();
        measure(points, w)
    }

    #[test]
    fn parallel_transport_avoids_crossing() {
        // Two atoms shifted vertically by 1: straight transport costs 1;
        // the crossing match would cost sqrt(1 + 4) each.
        let mu = measure(vec![vec![0.0, 0.0], vec![2.0, 0.0]], vec![0.5, 0.5]);
        let nu = measure(vec![vec![0.0, 1.0], vec![2.0, 1.0]], vec![0.5, 0.5]);
        let (d, plan) = wasserstein(&mu, &nu, 1.0).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
        assert_eq!(plan.entries, vec![(0, 0, 0.5), (1, 1, 0.5)]);
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mu = random_measure(&mut rng, 7, 2);
            let (d, _) = wasserstein(&mu, &mu, 2.0).unwrap();
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(w1_distance(&mu, &mu).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn plan_marginals_match_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let m = rng.gen_range(2..9);
            let n = rng.gen_range(2..9);
            let mu = random_measure(&mut rng, m, 2);
            let nu = random_measure(&mut rng, n, 2);
            let (_, plan) = wasserstein(&mu, &nu, 1.0).unwrap();
            let sm = plan.source_marginal(m);
            let tm = plan.sink_marginal(n);
            for (a, b) in sm.iter().zip(mu.weights()) {
                assert!((a - b).abs() < MARGINAL_TOL, "trial {trial}: row marginal off");
            }
            for (a, b) in tm.iter().zip(nu.weights()) {
                assert!((a - b).abs() < MARGINAL_TOL, "trial {trial}: column marginal off");
            }
        }
    }

    #[test]
    fn w1_reduction_matches_full_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let na = rng.gen_range(2..10);
            let nb = rng.gen_range(2..10);
            let mu = random_measure(&mut rng, na, 2);
            let nu = random_measure(&mut rng, nb, 2);
            let (full, _) = wasserstein(&mu, &nu, 1.0).unwrap();
            let reduced = w1_distance(&mu, &nu).unwrap();
            assert_abs_diff_eq!(full, reduced, epsilon = 1e-10);
        }
    }

    #[test]
    fn w1_reduction_cancels_shared_atoms() {
        // mu and nu share an atom at the origin with equal weight: the
        // distance only moves the differing 0.5 mass by 1.
        let mu = measure(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0.5, 0.5]);
        let nu = measure(vec![vec![0.0, 0.0], vec![2.0, 0.0]], vec![0.5, 0.5]);
        assert_abs_diff_eq!(w1_distance(&mu, &nu).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn one_dimensional_distance_matches_quantile_formula() {
        // In 1-d, W_p is the L^p distance between quantile functions;
        // compute it by sweeping the merged CDF breakpoints.
        fn quantile_wp(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> f64 {
            let sorted = |m: &EmpiricalMeasure| {
                let mut v: Vec<(f64, f64)> = m
                    .points()
                    .iter()
                    .map(|pt| pt[0])
                    .zip(m.weights().iter().copied())
                    .collect();
                v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                v
            };
            let a = sorted(mu);
            let b = sorted(nu);
            let (mut ia, mut ib) = (0usize, 0usize);
            let (mut ca, mut cb) = (a[0].1, b[0].1);
            let mut q = 0.0;
            let mut acc = 0.0;
            loop {
                let next = ca.min(cb);
                acc += (next - q) * (a[ia].0 - b[ib].0).abs().powf(p);
                q = next;
                if q >= 1.0 - 1e-12 {
                    break;
                }
                if ca <= cb {
                    ia += 1;
                    ca += a[ia].1;
                } else {
                    ib += 1;
                    cb += b[ib].1;
                }
            }
            acc.powf(1.0 / p)
        }
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let na = rng.gen_range(2..12);
            let nb = rng.gen_range(2..12);
            let mu = random_measure(&mut rng, na, 1);
            let nu = random_measure(&mut rng, nb, 1);
            for &p in &[1.0, 2.0] {
                let (d, _) = wasserstein(&mu, &nu, p).unwrap();
                assert_abs_diff_eq!(d, quantile_wp(&mu, &nu, p), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mu = measure(vec![vec![0.0, 0.0]], vec![1.0]);
        let nu1 = measure(vec![vec![0.0]], vec![1.0]);
        assert!(wasserstein(&mu, &nu1, 1.0).is_err());
        assert!(wasserstein(&mu, &mu, 0.5).is_err());
        let zero = EmpiricalMeasure::zero(2);
        assert!(wasserstein(&mu, &zero, 1.0).is_err());
    }

    #[test]
    fn larger_random_instances_beat_greedy_matching() {
        // Sanity: the exact optimum can never exceed a greedy assignment.
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..10 {
            let n = 40;
            let mu = random_measure(&mut rng, n, 2);
            let nu = random_measure(&mut rng, n, 2);
            let (d, plan) = wasserstein(&mu, &nu, 1.0).unwrap();
            let mut greedy = 0.0;
            for (i, w) in mu.weights().iter().enumerate() {
                // Ship everything to the nearest sink (infeasible for the
                // sink marginal, hence a lower bound on any feasible plan;
                // and the row-nearest upper bound uses sink capacities
                // ignored, so compare cost against per-row minimum).
                let best = (0..n)
                    .map(|j| geom::dist(&mu.points()[i], &nu.points()[j]))
                    .fold(f64::INFINITY, f64::min);
                greedy += w * best;
            }
            // Exact cost is at least the sum of row minima...
            assert!(d + 1e-12 >= greedy - 1e-12);
            // ...and matches its plan's recomputed cost.
            let recomputed: f64 = plan
                .entries
                .iter()
                .map(|&(i, j, f)| f * geom::dist(&mu.points()[i], &nu.points()[j]))
                .sum();
            assert_abs_diff_eq!(recomputed, plan.cost, epsilon = 1e-12);
        }
    }

    #[test]
    fn pushforward_respects_horizon() {
        let tr = PolylineTrajectory::new(
            0.0,
            0.5,
            vec![vec![0.0], vec![1.0], vec![2.0]],
            f64::INFINITY,
        )
        .unwrap();
        let bundle = TrajectoryBundle::equal_weights(vec![tr]).unwrap();
        let m = pushforward_at(&bundle, 0.75).unwrap();
        assert_abs_diff_eq!(m.points()[0][0], 1.5, epsilon = 1e-12);
        assert!(pushforward_at(&bundle, 1.5).is_err());
        assert!(pushforward_at(&bundle, -0.5).is_err());
    }

    #[test]
    fn constant_trajectories_metric_closed_form() {
        // Distance c apart, never moving: metric = c / (1 + c).
        for &c in &[0.1, 1.0, 7.5] {
            let a = PolylineTrajectory::constant(vec![0.0], 0.25, 9, f64::INFINITY).unwrap();
            let b = PolylineTrajectory::constant(vec![c], 0.25, 9, f64::INFINITY).unwrap();
            let d = trajectory_metric(&a, &b).unwrap();
            assert_abs_diff_eq!(d, c / (1.0 + c), epsilon = 1e-12);
        }
    }

    #[test]
    fn metric_axioms_on_random_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let random_traj = |rng: &mut ChaCha8Rng| {
            let pts = (0..13)
                .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
                .collect();
            PolylineTrajectory::new(0.0, 0.25, pts, f64::INFINITY).unwrap()
        };
        for _ in 0..50 {
            let a = random_traj(&mut rng);
            let b = random_traj(&mut rng);
            let c = random_traj(&mut rng);
            let dab = trajectory_metric(&a, &b).unwrap();
            let dba = trajectory_metric(&b, &a).unwrap();
            let dac = trajectory_metric(&a, &c).unwrap();
            let dcb = trajectory_metric(&c, &b).unwrap();
            assert_abs_diff_eq!(dab, dba, epsilon = 1e-15);
            assert!(dab <= dac + dcb + 1e-12, "triangle inequality violated");
            assert!(dab < 1.0);
            assert_abs_diff_eq!(trajectory_metric(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn metric_rejects_mismatched_grids() {
        let a = PolylineTrajectory::constant(vec![0.0], 0.25, 9, 0.0).unwrap();
        let b = PolylineTrajectory::constant(vec![0.0], 0.5, 9, 0.0).unwrap();
        assert!(trajectory_metric(&a, &b).is_err());
    }
}
