//! Scenario configuration: populations, speed law, discretization, seeds.
//!
//! A scenario file is a single JSON object:
//!
//! ```json
//! {
//!   "seed": 7,
//!   "speed": { "k_min": 0.2, "k_max": 1.0, "a_self": 1.0, "a_cross": 3.0, "sigma": 0.1 },
//!   "grid": { "lo": [-1.3, -0.55], "hi": [1.3, 0.55], "h": 0.05, "dt": 0.05, "t_max": 12.0 },
//!   "populations": [
//!     { "target": [ { "ball": { "center": [0.8, 0.0], "radius": 0.16 } } ],
//!       "initial": { "sampler": "gaussian", "center": [-0.8, 0.0], "std": 0.15, "count": 200 } }
//!   ]
//! }
//! ```
//!
//! `t_max` may be omitted; the horizon then defaults to a multiple of the
//! worst-case exit bound derived from the initial supports and the speed
//! bounds, so every population can settle before the horizon ends.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::congestion::SpeedModel;
use crate::defaults::HORIZON_SAFETY_FACTOR;
use crate::error::Error;
use crate::grid::SpaceTimeGrid;
use crate::measure::EmpiricalMeasure;
use crate::target::{reach_bounds, TargetPrimitive, TargetSet};
use crate::Result;

/// Initial-distribution sampler for one population.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "snake_case")]
pub enum InitialConfig {
    /// Regular lattice over `[lo, hi]`, equal weights.
    Lattice { lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize> },
    /// Isotropic Gaussian cloud, truncated to the grid box by
    /// resampling, equal weights.
    Gaussian { center: Vec<f64>, std: f64, count: usize },
    /// Explicit atoms with optional weights (default: equal).
    Explicit {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
}

/// One population: where it starts and where it wants to go.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub target: Vec<TargetPrimitive>,
    pub initial: InitialConfig,
}

/// Space-time discretization block of a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub h: f64,
    pub dt: f64,
    #[serde(default)]
    pub t_max: Option<f64>,
}

fn default_order() -> f64 {
    1.0
}

/// Parsed scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub populations: Vec<PopulationConfig>,
    pub speed: SpeedModel,
    pub grid: GridConfig,
    #[serde(default)]
    pub seed: u64,
    /// Wasserstein order used in reports.
    #[serde(default = "default_order")]
    pub p: f64,
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

/// Worst-case reach data for one population.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReachInfo {
    /// Radius of a ball around the origin containing the initial support.
    pub r0: f64,
    /// Distance from the origin to the target set.
    pub d0: f64,
    /// Upper bound on the exit time from the initial support.
    pub t_bound: f64,
    /// Radius that optimal trajectories from the initial support cannot
    /// leave before exiting.
    pub reach_radius: f64,
    /// Whether the grid box contains the ball of radius `reach_radius`;
    /// when false, box-boundary effects are not formally excluded.
    pub box_certified: bool,
}

/// Fully resolved scenario: validated config plus derived objects.
#[derive(Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: SpaceTimeGrid,
    pub targets: Vec<TargetSet>,
    pub initial: Vec<EmpiricalMeasure>,
    pub reach: Vec<ReachInfo>,
}

impl Scenario {
    /// Validates a parsed config, samples the initial measures and
    /// resolves the horizon.
    pub fn build(config: ScenarioConfig) -> Result<Self> {
        config.speed.validate()?;
        if config.populations.is_empty() {
            return Err(Error::Config("scenario needs at least one population".into()));
        }
        if !(config.p >= 1.0) {
            return Err(Error::Config(format!(
                "transport order p must be >= 1, got {}",
                config.p
            )));
        }
        let dim = config.grid.lo.len();
        if dim == 0 || config.grid.hi.len() != dim {
            return Err(Error::Config(
                "grid lo/hi must be nonempty and agree in length".into(),
            ));
        }

        let mut targets = Vec::with_capacity(config.populations.len());
        for (i, pop) in config.populations.iter().enumerate() {
            let t = TargetSet::new(pop.target.clone())
                .map_err(|e| Error::Config(format!("population {i} target: {e}")))?;
            if t.dim() != dim {
                return Err(Error::Config(format!(
                    "population {i} target dimension {} does not match grid dimension {dim}",
                    t.dim()
                )));
            }
            targets.push(t);
        }

        let mut initial = Vec::with_capacity(config.populations.len());
        for (i, pop) in config.populations.iter().enumerate() {
            let m = sample_initial(&pop.initial, &config.grid, config.seed, i)
                .map_err(|e| Error::Config(format!("population {i} initial: {e}")))?;
            initial.push(m);
        }

        let mut reach = Vec::with_capacity(targets.len());
        for (t, m) in targets.iter().zip(&initial) {
            let r0 = m.support_radius();
            let origin = vec![0.0; dim];
            let d0 = t.distance(&origin);
            let (t_bound, reach_radius) =
                reach_bounds(t, config.speed.k_min, config.speed.k_max, r0)?;
            let box_certified = (0..dim).all(|k| {
                config.grid.lo[k] <= -reach_radius && config.grid.hi[k] >= reach_radius
            });
            reach.push(ReachInfo { r0, d0, t_bound, reach_radius, box_certified });
        }

        let t_max = match config.grid.t_max {
            Some(t) => t,
            None => {
                // Budget for trajectories that first wander to the edge of
                // the certified region and only then head home.
                let worst = reach
                    .iter()
                    .map(|r| (r.reach_radius + r.d0) / config.speed.k_min)
                    .fold(0.0f64, f64::max);
                HORIZON_SAFETY_FACTOR * worst
            }
        };
        let grid = SpaceTimeGrid::new(
            config.grid.lo.clone(),
            config.grid.hi.clone(),
            config.grid.h,
            config.grid.dt,
            t_max,
        )?;
        grid.validate_cfl(config.speed.k_max)?;

        Ok(Self { config, grid, targets, initial, reach })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::build(ScenarioConfig::from_path(path)?)
    }

    pub fn n_populations(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }
}

/// Mixes the scenario seed with the population index so each population
/// draws an independent, reproducible stream.
fn population_rng(seed: u64, pop: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (pop as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sample_initial(
    cfg: &InitialConfig,
    grid: &GridConfig,
    seed: u64,
    pop: usize,
) -> Result<EmpiricalMeasure> {
    let dim = grid.lo.len();
    match cfg {
        InitialConfig::Lattice { lo, hi, counts } => {
            if lo.len() != dim || hi.len() != dim || counts.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: lo.len() });
            }
            if counts.iter().any(|&c| c == 0) {
                return Err(Error::InvalidParameter {
                    name: "counts",
                    reason: "lattice counts must be positive".into(),
                });
            }
            let total: usize = counts.iter().product();
            let mut points = Vec::with_capacity(total);
            let mut idx = vec![0usize; dim];
            loop {
                let p: Vec<f64> = (0..dim)
                    .map(|k| {
                        if counts[k] == 1 {
                            0.5 * (lo[k] + hi[k])
                        } else {
                            lo[k] + idx[k] as f64 * (hi[k] - lo[k]) / (counts[k] - 1) as f64
                        }
                    })
                    .collect();
                points.push(p);
                let mut k = dim;
                loop {
                    if k == 0 {
                        return EmpiricalMeasure::equal_weights(points);
                    }
                    k -= 1;
                    if idx[k] + 1 < counts[k] {
                        idx[k] += 1;
                        break;
                    }
                    idx[k] = 0;
                }
            }
        }
        InitialConfig::Gaussian { center, std, count } => {
            if center.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: center.len() });
            }
            if !(*std > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "std",
                    reason: format!("must be > 0, got {std}"),
                });
            }
            if *count == 0 {
                return Err(Error::InvalidParameter {
                    name: "count",
                    reason: "need at least one atom".into(),
                });
            }
            let normal = Normal::new(0.0, *std).expect("std validated above");
            let mut rng = population_rng(seed, pop);
            let mut points = Vec::with_capacity(*count);
            for _ in 0..*count {
                let mut tries = 0;
                loop {
                    let p: Vec<f64> =
                        (0..dim).map(|k| center[k] + normal.sample(&mut rng)).collect();
                    if (0..dim).all(|k| p[k] >= grid.lo[k] && p[k] <= grid.hi[k]) {
                        points.push(p);
                        break;
                    }
                    tries += 1;
                    if tries > 1000 {
                        return Err(Error::Config(
                            "gaussian sampler keeps landing outside the grid box; \
                             move the center or shrink std"
                                .into(),
                        ));
                    }
                }
            }
            EmpiricalMeasure::equal_weights(points)
        }
        InitialConfig::Explicit { points, weights } => {
            for p in points {
                if p.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
                }
                if (0..dim).any(|k| p[k] < grid.lo[k] || p[k] > grid.hi[k]) {
                    return Err(Error::Config(format!(
                        "explicit atom {p:?} lies outside the grid box"
                    )));
                }
            }
            match weights {
                Some(w) => EmpiricalMeasure::new(points.clone(), w.clone()),
                None => EmpiricalMeasure::equal_weights(points.clone()),
            }
        }
    }
}
