//! Scratch probe: decompose the corridor continuity residual into
//! FD-gradient velocity vs member-own velocity, and count kink flags.

use std::fs::File;
use std::io::BufReader;

use mfg_core::congestion::SpeedField;
use mfg_core::defaults::{GRAD_NORM_FLOOR, KINK_SECOND_DIFF_FACTOR};
use mfg_core::diagnostics::sample_test_bumps;
use mfg_core::equilibrium::best_response;
use mfg_core::export::read_bundle_csv;
use mfg_core::geom;
use mfg_core::ocp::{fd_gradient, solve_value_function, SolverParams, ValueField};
use mfg_core::scenario::Scenario;

fn kink_flag(value: &ValueField, j: usize, x: &[f64], h: f64) -> bool {
    let d = x.len();
    for k in 0..d {
        let mut up = x.to_vec();
        up[k] += h;
        let mut dn = x.to_vec();
        dn[k] -= h;
        let (a, b, c) = (
            value.value_at_step(j, &dn),
            value.value_at_step(j, x),
            value.value_at_step(j, &up),
        );
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return true;
        }
        if (a - 2.0 * b + c).abs() > KINK_SECOND_DIFF_FACTOR * h {
            return true;
        }
    }
    false
}

fn main() {
    let scenario = Scenario::from_path("/tmp/cli_smoke/corridor.json".as_ref()).unwrap();
    let solver = SolverParams::default();
    let bundles: Vec<_> = (0..2)
        .map(|pop| {
            let f = File::open(format!("/tmp/cli_smoke/corridor_run/trajectories_pop{pop}.csv"))
                .unwrap();
            read_bundle_csv(&mut BufReader::new(f)).unwrap()
        })
        .collect();
    let field =
        SpeedField::from_bundles(&bundles, &scenario.config.speed, &scenario.grid).unwrap();
    let grid = &scenario.grid;
    let (h, dt) = (grid.h(), grid.dt());
    let scale = h + dt;

    for pop in 0..2 {
        let speed = field.population(pop);
        let value =
            solve_value_function(grid, &scenario.targets[pop], &speed, &solver).unwrap();
        let (br, _) = best_response(&scenario, &field, pop, &solver).unwrap();
        let bumps = sample_test_bumps(grid, &scenario.targets[pop], 0, 10).unwrap();

        let mut fd_acc = vec![0.0f64; bumps.len()];
        let mut hybrid_acc = vec![0.0f64; bumps.len()];
        let mut own_acc = vec![0.0f64; bumps.len()];
        let mut kinked = 0usize;
        let mut smooth = 0usize;

        for (tr, w) in br.trajectories().iter().zip(br.weights()) {
            let pts = tr.points();
            for j in 0..grid.n_slices() {
                let t = grid.time(j);
                let x = &pts[j];
                for (bi, b) in bumps.iter().enumerate() {
                    if !b.in_support(t, x) {
                        continue;
                    }
                    let mut grad_z = vec![0.0; x.len()];
                    b.grad(t, x, &mut grad_z);
                    let dtz = b.dt(t, x);
                    // Member's own velocity from the step it actually took.
                    let own: Vec<f64> = if j + 1 < pts.len() {
                        (0..x.len()).map(|c| (pts[j + 1][c] - x[c]) / dt).collect()
                    } else {
                        vec![0.0; x.len()]
                    };
                    let own_term: f64 = (0..x.len()).map(|c| own[c] * grad_z[c]).sum();
                    own_acc[bi] += w * dt * (dtz + own_term);

                    let k_here = mfg_core::congestion::SpeedSource::speed_at(&speed, t, x);
                    let step_len = geom::norm(&own) * dt;
                    let clamped = j + 1 < pts.len()
                        && tr.exit_time() > t + dt
                        && step_len < 0.98 * dt * k_here;
                    let report = mfg_core::ocp::descent_report(&value, &speed, t, x, None);
                    let est = mfg_core::ocp::descent_direction(&report);
                    let is_kink = !est.unique || kink_flag(&value, j, x, h) || clamped;
                    if is_kink {
                        kinked += 1;
                    } else {
                        smooth += 1;
                    }

                    let k = mfg_core::congestion::SpeedSource::speed_at(&speed, t, x);
                    let fd_term = fd_gradient(&value, j, x, h).and_then(|g| {
                        let gn = geom::norm(&g);
                        if gn < GRAD_NORM_FLOOR {
                            None
                        } else {
                            Some((0..x.len()).map(|c| -g[c] / gn * k * grad_z[c]).sum::<f64>())
                        }
                    });
                    if let Some(adv) = fd_term {
                        fd_acc[bi] += w * dt * (dtz + adv);
                        hybrid_acc[bi] += w * dt * (dtz + if is_kink { own_term } else { adv });
                    } else {
                        hybrid_acc[bi] += w * dt * (dtz + own_term);
                    }
                }
            }
        }
        let m = |acc: &[f64]| acc.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        println!(
            "pop {pop}: fd {:.4} ({:.3}sc)  hybrid {:.4} ({:.3}sc)  own {:.4} ({:.3}sc)  kinked {kinked} smooth {smooth}",
            m(&fd_acc),
            m(&fd_acc) / scale,
            m(&hybrid_acc),
            m(&hybrid_acc) / scale,
            m(&own_acc),
            m(&own_acc) / scale,
        );
        for (bi, b) in bumps.iter().enumerate() {
            println!(
                "  bump {bi}: t {:.2}±{:.2} x ({:.2},{:.2})±{:.2}  fd {:+.4} hybrid {:+.4} own {:+.4}",
                b.t_center, b.t_width, b.center[0], b.center[1], b.width,
                fd_acc[bi], hybrid_acc[bi], own_acc[bi],
            );
        }
        // Angle/speed stats for the worst bump, smooth slices only.
        let worst = (0..bumps.len())
            .max_by(|&a, &b| {
                hybrid_acc[a].abs().partial_cmp(&hybrid_acc[b].abs()).unwrap()
            })
            .unwrap();
        let b = &bumps[worst];
        let mut n = 0usize;
        let mut w_sum = 0.0;
        let mut ang_sum = 0.0;
        let mut ang_max = 0.0f64;
        let mut spd_sum = 0.0;
        for (tr, w) in br.trajectories().iter().zip(br.weights()) {
            let pts = tr.points();
            for j in 0..grid.n_slices() - 1 {
                let t = grid.time(j);
                let x = &pts[j];
                if !b.in_support(t, x) || tr.exit_time() <= t + dt {
                    continue;
                }
                let own: Vec<f64> =
                    (0..x.len()).map(|c| (pts[j + 1][c] - x[c]) / dt).collect();
                let on = geom::norm(&own);
                if on < 1e-12 {
                    continue;
                }
                let k = mfg_core::congestion::SpeedSource::speed_at(&speed, t, x);
                let Some(g) = fd_gradient(&value, j, x, h) else { continue };
                let gn = geom::norm(&g);
                if gn < GRAD_NORM_FLOOR || kink_flag(&value, j, x, h) {
                    continue;
                }
                let fd_dir: Vec<f64> = g.iter().map(|v| -v / gn).collect();
                let own_dir: Vec<f64> = own.iter().map(|v| v / on).collect();
                let ang = geom::angle_between(&fd_dir, &own_dir);
                n += 1;
                w_sum += w;
                ang_sum += w * ang;
                ang_max = ang_max.max(ang);
                spd_sum += w * on / k;
            }
        }
        println!(
            "  worst bump {worst}: {n} smooth slices, mean angle {:.1} deg, max {:.1} deg, mean |v|/k {:.3}",
            ang_sum / w_sum * 180.0 / std::f64::consts::PI,
            ang_max * 180.0 / std::f64::consts::PI,
            spd_sum / w_sum,
        );
    }
}
