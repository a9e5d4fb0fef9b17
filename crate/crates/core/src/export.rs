//! Deterministic artifact serialization: CSV tables, one documented
//! binary dump for value fields, and JSON reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! identical in-memory values produce identical bytes and every table
//! can be parsed back losslessly.  Wall-clock timings go to their own
//! table and never into the iteration log, keeping the log byte-stable
//! across machines.

use std::io::{BufRead, Read, Write};

use crate::equilibrium::IterationRecord;
use crate::error::Error;
use crate::grid::SpaceTimeGrid;
use crate::measure::EmpiricalMeasure;
use crate::ocp::ValueField;
use crate::trajectory::{PolylineTrajectory, TrajectoryBundle};
use crate::Result;

/// Magic bytes opening the value-field binary dump.
pub const VALUE_DUMP_MAGIC: &[u8; 4] = b"MFGV";
/// Format version of the value-field binary dump.
pub const VALUE_DUMP_VERSION: u32 = 1;

fn bad_artifact(what: impl Into<String>) -> Error {
    Error::Artifact(what.into())
}

/// Writes a value field as CSV: header `t,x0..x{d-1},phi`, one row per
/// (slice, node), slices outermost, nodes in index order.
pub fn write_value_csv(out: &mut impl Write, field: &ValueField) -> Result<()> {
    let grid = field.grid();
    let d = grid.dim();
    write!(out, "t")?;
    for k in 0..d {
        write!(out, ",x{k}")?;
    }
    writeln!(out, ",phi")?;
    let mut pos = vec![0.0; d];
    for j in 0..grid.n_slices() {
        let t = grid.time(j);
        let slice = field.slice(j);
        for (i, v) in slice.iter().enumerate() {
            grid.node_position(i, &mut pos);
            write!(out, "{t}")?;
            for p in &pos {
                write!(out, ",{p}")?;
            }
            writeln!(out, ",{v}")?;
        }
    }
    Ok(())
}

/// Writes the documented binary dump of a value field.
///
/// Layout (little endian): magic `MFGV`, format version u32, dim u32,
/// n_slices u64, per-axis node counts u64 each, then lo, h (cell), dt as
/// f64s (lo has dim entries), then n_slices * n_nodes f64 values, slices
/// outermost, nodes in row-major index order.  Target-band nodes carry
/// 0, unreachable nodes +inf.
pub fn write_value_binary(out: &mut impl Write, field: &ValueField) -> Result<()> {
    let grid = field.grid();
    out.write_all(VALUE_DUMP_MAGIC)?;
    out.write_all(&VALUE_DUMP_VERSION.to_le_bytes())?;
    out.write_all(&(grid.dim() as u32).to_le_bytes())?;
    out.write_all(&(grid.n_slices() as u64).to_le_bytes())?;
    for k in 0..grid.dim() {
        out.write_all(&(grid.n_axis(k) as u64).to_le_bytes())?;
    }
    for k in 0..grid.dim() {
        out.write_all(&grid.lo()[k].to_le_bytes())?;
    }
    out.write_all(&grid.h().to_le_bytes())?;
    out.write_all(&grid.dt().to_le_bytes())?;
    for j in 0..grid.n_slices() {
        for v in field.slice(j) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parsed contents of a value-field binary dump.
#[derive(Debug, Clone)]
pub struct ValueDump {
    pub dim: usize,
    pub n_slices: usize,
    pub counts: Vec<usize>,
    pub lo: Vec<f64>,
    pub h: f64,
    pub dt: f64,
    /// `values[slice][node]`, node order row-major.
    pub values: Vec<Vec<f64>>,
}

/// Reads back a value-field binary dump.
pub fn read_value_binary(input: &mut impl Read) -> Result<ValueDump> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != VALUE_DUMP_MAGIC {
        return Err(bad_artifact("value dump: bad magic bytes"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VALUE_DUMP_VERSION {
        return Err(bad_artifact(format!("value dump: unsupported version {version}")));
    }
    input.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    input.read_exact(&mut u64buf)?;
    let n_slices = u64::from_le_bytes(u64buf) as usize;
    let mut counts = Vec::with_capacity(dim);
    for _ in 0..dim {
        input.read_exact(&mut u64buf)?;
        counts.push(u64::from_le_bytes(u64buf) as usize);
    }
    let mut lo = Vec::with_capacity(dim);
    for _ in 0..dim {
        input.read_exact(&mut u64buf)?;
        lo.push(f64::from_le_bytes(u64buf));
    }
    input.read_exact(&mut u64buf)?;
    let h = f64::from_le_bytes(u64buf);
    input.read_exact(&mut u64buf)?;
    let dt = f64::from_le_bytes(u64buf);
    let n_nodes: usize = counts.iter().product();
    let mut values = Vec::with_capacity(n_slices);
    for _ in 0..n_slices {
        let mut slice = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            input.read_exact(&mut u64buf)?;
            slice.push(f64::from_le_bytes(u64buf));
        }
        values.push(slice);
    }
    Ok(ValueDump { dim, n_slices, counts, lo, h, dt, values })
}

/// Writes a trajectory bundle as CSV: header
/// `traj,weight,exit_time,t,x0..x{d-1}`, one row per (member, node),
/// members outermost.  Unexited members carry `inf` exit times.
pub fn write_bundle_csv(out: &mut impl Write, bundle: &TrajectoryBundle) -> Result<()> {
    let d = bundle.dim();
    write!(out, "traj,weight,exit_time,t")?;
    for k in 0..d {
        write!(out, ",x{k}")?;
    }
    writeln!(out)?;
    for (m, (tr, w)) in bundle.trajectories().iter().zip(bundle.weights()).enumerate() {
        let exit = tr.exit_time();
        for (j, point) in tr.points().iter().enumerate() {
            let t = tr.t0() + j as f64 * bundle.dt();
            write!(out, "{m},{w},{exit},{t}")?;
            for c in point {
                write!(out, ",{c}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Parses a bundle CSV produced by [`write_bundle_csv`].
pub fn read_bundle_csv(input: &mut impl BufRead) -> Result<TrajectoryBundle> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad_artifact("bundle csv: empty file"))??;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 5 || cols[0] != "traj" || cols[1] != "weight" || cols[2] != "exit_time" {
        return Err(bad_artifact(format!("bundle csv: unexpected header {header:?}")));
    }
    let d = cols.len() - 4;
    let mut members: Vec<(f64, f64, Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.trim_end().split(',');
        let parse = |s: Option<&str>, what: &str| -> Result<f64> {
            s.ok_or_else(|| bad_artifact(format!("bundle csv: missing {what}")))?
                .parse::<f64>()
                .map_err(|e| bad_artifact(format!("bundle csv: bad {what}: {e}")))
        };
        let idx = parse(fields.next(), "traj")? as usize;
        let weight = parse(fields.next(), "weight")?;
        let exit = parse(fields.next(), "exit_time")?;
        let t = parse(fields.next(), "t")?;
        let mut point = Vec::with_capacity(d);
        for k in 0..d {
            point.push(parse(fields.next(), &format!("x{k}"))?);
        }
        if idx == members.len() {
            members.push((weight, exit, Vec::new(), Vec::new()));
        } else if idx + 1 != members.len() {
            return Err(bad_artifact(format!("bundle csv: member index {idx} out of order")));
        }
        let member = members.last_mut().expect("just ensured nonempty");
        member.2.push(point);
        member.3.push(t);
    }
    if members.is_empty() {
        return Err(bad_artifact("bundle csv: no members"));
    }
    let mut trajectories = Vec::with_capacity(members.len());
    let mut weights = Vec::with_capacity(members.len());
    for (weight, exit, points, times) in members {
        if times.len() < 2 {
            return Err(bad_artifact("bundle csv: member with fewer than two nodes"));
        }
        let t0 = times[0];
        let dt = times[1] - times[0];
        trajectories.push(PolylineTrajectory::new(t0, dt, points, exit)?);
        weights.push(weight);
    }
    TrajectoryBundle::new(trajectories, weights)
}

/// Writes empirical-measure snapshots of a bundle: header
/// `slice,t,x0..,weight`, every `stride`-th slice plus always the final
/// one.
pub fn write_measure_csv(
    out: &mut impl Write,
    bundle: &TrajectoryBundle,
    stride: usize,
) -> Result<()> {
    let d = bundle.dim();
    let stride = stride.max(1);
    write!(out, "slice,t")?;
    for k in 0..d {
        write!(out, ",x{k}")?;
    }
    writeln!(out, ",weight")?;
    let n = bundle.n_nodes();
    let write_slice = |j: usize, out: &mut dyn Write| -> Result<()> {
        let measure: EmpiricalMeasure = bundle.measure_at_step(j);
        let t = j as f64 * bundle.dt();
        for (p, w) in measure.points().iter().zip(measure.weights()) {
            write!(out, "{j},{t}")?;
            for c in p {
                write!(out, ",{c}")?;
            }
            writeln!(out, ",{w}")?;
        }
        Ok(())
    };
    for j in (0..n).step_by(stride) {
        write_slice(j, out)?;
    }
    if (n - 1) % stride != 0 {
        write_slice(n - 1, out)?;
    }
    Ok(())
}

/// Writes the deterministic iteration log: header
/// `iteration,lambda,residual` plus per-population blocks
/// `pop{i}_{bundle_size,mean_exit_time,exited_mass,unexited_mass,residual_solves,merges}`.
/// No wall-clock data enters this table.
pub fn write_iteration_log(out: &mut impl Write, history: &[IterationRecord]) -> Result<()> {
    let n_pops = history.first().map(|r| r.per_population.len()).unwrap_or(0);
    write!(out, "iteration,lambda,residual")?;
    for i in 0..n_pops {
        write!(
            out,
            ",pop{i}_bundle_size,pop{i}_mean_exit_time,pop{i}_exited_mass,pop{i}_unexited_mass,pop{i}_residual_solves,pop{i}_merges"
        )?;
    }
    writeln!(out)?;
    for rec in history {
        write!(out, "{},{},{}", rec.iteration, rec.lambda, rec.residual)?;
        for p in &rec.per_population {
            write!(
                out,
                ",{},{},{},{},{},{}",
                p.bundle_size,
                p.mean_exit_time,
                p.exited_mass,
                p.unexited_mass,
                p.residual_solves,
                p.merges
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes wall-clock phase timings, one row per iteration.  Kept apart
/// from the iteration log because timings differ run to run.
pub fn write_timings_csv(out: &mut impl Write, history: &[IterationRecord]) -> Result<()> {
    writeln!(out, "iteration,solve_s,trace_s,residual_s")?;
    for rec in history {
        writeln!(
            out,
            "{},{},{},{}",
            rec.iteration, rec.timings.solve_s, rec.timings.trace_s, rec.timings.residual_s
        )?;
    }
    Ok(())
}

/// Serializes any report as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)
        .map_err(|e| bad_artifact(format!("json serialization: {e}")))?;
    writeln!(out)?;
    Ok(())
}

/// Grid reconstruction helper for dumps (t_max from slice count).
pub fn dump_grid(dump: &ValueDump) -> Result<SpaceTimeGrid> {
    let hi: Vec<f64> = (0..dump.dim)
        .map(|k| dump.lo[k] + (dump.counts[k] - 1) as f64 * dump.h)
        .collect();
    SpaceTimeGrid::new(
        dump.lo.clone(),
        hi,
        dump.h,
        dump.dt,
        (dump.n_slices - 1) as f64 * dump.dt,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congestion::ConstantSpeed;
    use crate::equilibrium::{IterationTimings, PopulationRecord};
    use crate::ocp::{solve_value_function, SolverParams};
    use crate::target::TargetSet;
    use approx::assert_abs_diff_eq;

    fn small_field() -> ValueField {
        let grid =
            SpaceTimeGrid::new(vec![-0.5, -0.5], vec![0.5, 0.5], 0.1, 0.1, 0.9).unwrap();
        let target = TargetSet::point(vec![0.0, 0.0]).unwrap();
        let speed = ConstantSpeed { k: 1.0, dim: 2 };
        solve_value_function(&grid, &target, &speed, &SolverParams::default()).unwrap()
    }

    fn small_bundle() -> TrajectoryBundle {
        let a = PolylineTrajectory::new(
            0.0,
            0.1,
            vec![vec![0.4, 0.0], vec![0.3, 0.0], vec![0.2, 0.0], vec![0.2, 0.0]],
            0.2,
        )
        .unwrap();
        let b = PolylineTrajectory::new(
            0.0,
            0.1,
            vec![vec![-0.4, 0.1], vec![-0.3, 0.1], vec![-0.2, 0.1], vec![-0.1, 0.1]],
            f64::INFINITY,
        )
        .unwrap();
        TrajectoryBundle::new(vec![a, b], vec![0.75, 0.25]).unwrap()
    }

    #[test]
    fn value_binary_round_trips() {
        let field = small_field();
        let mut buf = Vec::new();
        write_value_binary(&mut buf, &field).unwrap();
        let dump = read_value_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(dump.dim, 2);
        assert_eq!(dump.n_slices, field.n_slices());
        assert_eq!(dump.counts, vec![11, 11]);
        for j in 0..dump.n_slices {
            for (a, b) in dump.values[j].iter().zip(field.slice(j)) {
                assert!(a.to_bits() == b.to_bits());
            }
        }
        let grid = dump_grid(&dump).unwrap();
        assert_abs_diff_eq!(grid.h(), 0.1, epsilon = 1e-15);
        assert_eq!(grid.n_nodes(), 121);
    }

    #[test]
    fn value_binary_rejects_garbage() {
        let r = read_value_binary(&mut &b"NOPE............"[..]);
        assert!(matches!(r, Err(Error::Artifact(_))));
    }

    #[test]
    fn value_csv_has_expected_shape() {
        let field = small_field();
        let mut buf = Vec::new();
        write_value_csv(&mut buf, &field).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x0,x1,phi"));
        let rows = text.lines().count() - 1;
        assert_eq!(rows, field.n_slices() * 121);
        // Target node at the origin carries value 0 at every time.
        assert!(text.lines().any(|l| l.starts_with("0,0,0,0")));
    }

    #[test]
    fn bundle_csv_round_trips_bitwise() {
        let bundle = small_bundle();
        let mut buf = Vec::new();
        write_bundle_csv(&mut buf, &bundle).unwrap();
        let back = read_bundle_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), bundle.len());
        for m in 0..bundle.len() {
            assert_eq!(back.weights()[m].to_bits(), bundle.weights()[m].to_bits());
            let (ta, tb) = (&back.trajectories()[m], &bundle.trajectories()[m]);
            assert_eq!(ta.exit_time().to_bits(), tb.exit_time().to_bits());
            for (pa, pb) in ta.points().iter().zip(tb.points()) {
                for (a, b) in pa.iter().zip(pb) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
        // Writing the parsed bundle again reproduces the bytes.
        let mut buf2 = Vec::new();
        write_bundle_csv(&mut buf2, &back).unwrap();
        let mut buf1 = Vec::new();
        write_bundle_csv(&mut buf1, &bundle).unwrap();
        assert_eq!(buf1, buf2);
    }

    #[test]
    fn bundle_csv_rejects_malformed_input() {
        assert!(read_bundle_csv(&mut &b""[..]).is_err());
        assert!(read_bundle_csv(&mut &b"nope,nope\n"[..]).is_err());
        let bad_order = "traj,weight,exit_time,t,x0\n1,0.5,inf,0,0.1\n";
        assert!(read_bundle_csv(&mut bad_order.as_bytes()).is_err());
    }

    #[test]
    fn measure_csv_strides_and_includes_final_slice() {
        let bundle = small_bundle();
        let mut buf = Vec::new();
        write_measure_csv(&mut buf, &bundle, 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let slices: Vec<&str> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(slices, vec!["0", "0", "3", "3"]);
    }

    #[test]
    fn iteration_log_is_stable_and_timings_separate() {
        let history = vec![IterationRecord {
            iteration: 1,
            lambda: 0.5,
            residual: 0.125,
            per_population: vec![PopulationRecord {
                bundle_size: 10,
                mean_exit_time: 1.5,
                exited_mass: 1.0,
                unexited_mass: 0.0,
                residual_solves: 2,
                merges: 3,
            }],
            timings: IterationTimings { solve_s: 0.9, trace_s: 0.1, residual_s: 0.2 },
        }];
        let mut log = Vec::new();
        write_iteration_log(&mut log, &history).unwrap();
        let text = String::from_utf8(log).unwrap();
        assert_eq!(
            text,
            "iteration,lambda,residual,pop0_bundle_size,pop0_mean_exit_time,pop0_exited_mass,pop0_unexited_mass,pop0_residual_solves,pop0_merges\n1,0.5,0.125,10,1.5,1,0,2,3\n"
        );
        assert!(!text.contains("0.9"), "wall time leaked into the log");
        let mut tim = Vec::new();
        write_timings_csv(&mut tim, &history).unwrap();
        let ttext = String::from_utf8(tim).unwrap();
        assert!(ttext.contains("0.9"));
    }
}
