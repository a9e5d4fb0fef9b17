//! Centralized numerical defaults and tolerances.
//!
//! Every free constant of the discretization lives here with a short
//! rationale, so that tuning happens in one place and tests can refer to
//! the same values the library uses.

/// Number of unit directions sampled when minimizing over controls (d = 2).
/// 64 directions give a 5.6° angular resolution, below the 10° tolerances
/// used by the direction diagnostics.
pub const DIRECTION_COUNT: usize = 64;

/// Descent-ratio probe step as a multiple of dt.  The one-sided difference
/// quotient that approximates the instantaneous decay rate of the value
/// function is evaluated over this horizon.
pub const PROBE_STEP_FACTOR: f64 = 1.0;

/// Ratio slack for membership in the near-optimal direction set at the
/// reference fan of [`DIRECTION_COUNT`] directions: every direction whose
/// difference quotient is within this of the minimum is kept.  Ratios
/// live on an O(1) scale (the optimal one is close to -1).  Finer fans
/// shrink the slack with the squared angular spacing so the window stays
/// a fixed number of fan notches wide.
pub const SELECT_TOL: f64 = 0.02;

/// Angular diameter below which the selected direction set counts as a
/// single cluster, i.e. the descent direction is considered unique.
pub const CLUSTER_ANGLE: f64 = std::f64::consts::PI / 6.0;

/// Trajectories closer than this in the trajectory-space metric are merged
/// during bundle compaction (weights summed).
pub const COMPACTION_TOL: f64 = 1e-4;

/// Stationary sweeps stop when the max node update falls below
/// `STATIONARY_TOL_FACTOR * dt`.
pub const STATIONARY_TOL_FACTOR: f64 = 1e-6;

/// Cap on Gauss–Seidel sweeps for the stationary value solve.
pub const STATIONARY_MAX_SWEEPS: usize = 1000;

/// Gaussian kernel contributions beyond this many standard deviations are
/// dropped when scattering densities onto the grid; exp(-40.5) ≈ 2.6e-18
/// is far below every tolerance in the crate.
pub const KERNEL_CUTOFF_SIGMAS: f64 = 9.0;

/// Atom weights must sum to one within this.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Transport plan marginals must match the input measures within this.
pub const MARGINAL_TOL: f64 = 1e-10;

/// Absolute slack used when comparing floating-point coordinates against
/// box bounds (scaled by h where a length scale is available).
pub const GEOM_EPS: f64 = 1e-9;

/// Default kernel bandwidth as a multiple of the grid spacing when a
/// scenario does not fix one.
pub const BANDWIDTH_GRID_FACTOR: f64 = 2.0;

/// Default horizon as a multiple of the worst-case reach bound T(psi(R0)).
pub const HORIZON_SAFETY_FACTOR: f64 = 1.5;

/// Default number of sample points in randomized diagnostics.
pub const DIAGNOSTIC_SAMPLES: usize = 200;

/// Angular mismatch (degrees) tolerated between a traced first step and
/// the probed maximal-descent direction.
pub const DIRECTION_ANGLE_TOL_DEG: f64 = 10.0;

/// Fraction of direction samples that must fall within the angle
/// tolerance for the consistency check to pass.
pub const DIRECTION_PASS_FRACTION: f64 = 0.95;

/// Nodes whose centered second difference along any axis exceeds this
/// multiple of h are treated as gradient kinks and excluded from
/// smooth-point residual checks.  Away from kinks the second difference
/// is O(h^2); across a kink it is O(h) times the gradient jump.
pub const KINK_SECOND_DIFF_FACTOR: f64 = 1.0;

/// Finite-difference gradients with norm below this are treated as
/// unreliable (kink cancellation or plateaus) and skipped; a genuine
/// value gradient has norm ~ 1/k, well above it for speeds of order one.
pub const GRAD_NORM_FLOOR: f64 = 0.2;

/// Scale constant of the continuity-equation weak-residual bound
/// `C * (h + dt)`.  Calibrated on a single-atom transport run in a
/// smoothly varying speed field (worst per-bump residual / (h + dt)
/// measured ~0.14 across bump seeds and resolutions; see the continuity
/// diagnostics tests) with a 2x safety margin.
pub const CONTINUITY_C: f64 = 0.3;

/// A plan bundle passes the equilibrium-gap check when its mean
/// optimality gap (extra travel time over the best response against the
/// bundle's own field) stays below this fraction of the mean exit time.
pub const EQUILIBRIUM_GAP_TOL: f64 = 0.05;
