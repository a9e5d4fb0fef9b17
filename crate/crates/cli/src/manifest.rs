//! Run manifests: the parameters a run actually used plus content hashes
//! of the artifacts it wrote, enough to re-run the command exactly and to
//! detect tampered or mismatched inputs later.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Value-solver knobs after default expansion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub directions: usize,
    pub stationary_tol_factor: f64,
    pub stationary_max_sweeps: usize,
}

impl From<&mfg_core::ocp::SolverParams> for SolverSettings {
    fn from(p: &mfg_core::ocp::SolverParams) -> Self {
        Self {
            directions: p.directions,
            stationary_tol_factor: p.stationary_tol_factor,
            stationary_max_sweeps: p.stationary_max_sweeps,
        }
    }
}

/// Fixed-point driver knobs after default expansion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationSettings {
    pub mode: String,
    pub max_iters: usize,
    pub tolerance: f64,
    pub compaction_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Sub-command that produced this directory.
    pub command: String,
    /// Crate version that wrote the artifacts.
    pub artifact_version: String,
    /// Scenario path as given on the command line.
    pub scenario_path: String,
    /// SHA-256 of the scenario file content.
    pub scenario_sha256: String,
    /// Sampling seed actually used (CLI override already applied).
    pub seed: u64,
    /// Explicit worker-thread count, if one was requested.
    pub workers: Option<usize>,
    pub solver: SolverSettings,
    /// Present only for equilibrium runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<IterationSettings>,
    /// SHA-256 of every artifact written next to this manifest.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per phase.  Informational: this is the one
    /// field that varies between otherwise bit-identical runs.
    pub timings_s: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Loads and parses `manifest.json`; any problem is an artifact
    /// mismatch (exit 5) because the directory cannot be trusted.
    pub fn load(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path)
            .map_err(|e| Failure::new(5, format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::new(5, format!("malformed {}: {e}", path.display())))
    }

    /// Recomputes every artifact hash and compares against the recorded
    /// ones; the first difference is reported as exit 5.
    pub fn check_artifacts(&self, dir: &Path) -> Result<(), Failure> {
        for (name, expected) in &self.artifacts {
            let path = dir.join(name);
            let bytes = fs::read(&path)
                .map_err(|e| Failure::new(5, format!("missing artifact {}: {e}", path.display())))?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(Failure::new(
                    5,
                    format!("artifact hash mismatch for {name}: manifest {expected}, file {actual}"),
                ));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut acc, b| {
            use std::fmt::Write as _;
            let _ = write!(acc, "{b:02x}");
            acc
        })
}

/// Artifact directory in the making: writes files and records their
/// hashes for the manifest.
pub struct ArtifactDir {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl ArtifactDir {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::new(1, format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), hashes: BTreeMap::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| Failure::new(1, format!("cannot write {}: {e}", path.display())))?;
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes `manifest.json` itself; the manifest records the other
    /// files' hashes, not its own.
    pub fn finish(self, mut manifest: RunManifest) -> Result<(), Failure> {
        manifest.artifacts = self.hashes;
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Failure::new(1, format!("cannot serialize manifest: {e}")))?;
        let path = self.dir.join(MANIFEST_NAME);
        fs::write(&path, format!("{text}\n"))
            .map_err(|e| Failure::new(1, format!("cannot write {}: {e}", path.display())))
    }
}
