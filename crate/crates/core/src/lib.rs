//! Solver and verification suite for multi-population minimal-time crowd
//! motion games.
//!
//! Each of `N` interacting populations tries to reach its own target set as
//! fast as possible.  Agents move with a speed capped by a congestion law:
//! the admissible speed at a point depends on the local density of the
//! agent's own population and on the average density of the others.  An
//! equilibrium is a family of trajectory distributions such that almost
//! every trajectory is time-optimal for the speed field induced by the
//! distributions themselves.
//!
//! The crate provides:
//!
//! * discrete measures, polyline trajectories and target-set geometry
//!   ([`measure`], [`trajectory`], [`target`], [`grid`], [`scenario`]);
//! * exact discrete optimal transport and the trajectory-space metric
//!   ([`transport`]);
//! * the congestion speed law and grid-backed speed fields ([`congestion`]);
//! * a semi-Lagrangian solver for the minimal-time value function, descent
//!   directions and optimal-trajectory tracing ([`ocp`]);
//! * fixed-point iteration (fictitious play / Picard) towards equilibrium
//!   ([`equilibrium`]);
//! * a posteriori checks of the structural properties the solution should
//!   satisfy — dynamic programming, Hamilton–Jacobi residual, direction
//!   characterization, long-time behaviour, support bounds and the coupled
//!   transport system ([`diagnostics`]);
//! * deterministic artifact export ([`export`]).
//!
//! All randomness is routed through seeded generators; a fixed seed yields
//! byte-identical artifacts.  Heavy kernels are data-parallel via `rayon`
//! when the `parallel` feature (default) is enabled and fall back to
//! sequential loops otherwise; results do not depend on the thread count.

pub mod congestion;
pub mod defaults;
pub mod diagnostics;
pub mod equilibrium;
pub mod error;
pub mod export;
pub mod geom;
pub mod grid;
pub mod measure;
pub mod ocp;
pub mod par;
pub mod scenario;
pub mod target;
pub mod trajectory;
pub mod transport;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
