//! JSON experiment configuration.
//!
//! Unknown keys anywhere are rejected. The canonical form (sorted keys, no
//! whitespace) is what gets hashed into the run manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::default_alpha;
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::grid::Mesh1D;
use crate::noise::NoiseSpec;
use crate::potential::PotentialSpec;
use crate::problem::Problem;
use crate::solver::SolverConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub domain_length: f64,
    pub n_interior: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub delta0: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Hölder exponent; the midpoint of the admissible window when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub potential: PotentialSpec,
    pub noise: NoiseSpec,
    pub mesh: MeshConfig,
    pub solver: SolverConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub ensemble: EnsembleConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Sorted-key compact JSON.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    /// Hex SHA-256 of [`Config::canonical_json`].
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    pub fn problem(&self) -> Result<Problem> {
        let mesh = Mesh1D::new(self.mesh.domain_length, self.mesh.n_interior)?;
        let problem = Problem::new(
            self.potential.clone(),
            self.noise.clone(),
            mesh,
            self.solver,
            self.initial.delta0,
        )?;
        self.ensemble.validate(self.initial.delta0)?;
        Ok(problem)
    }

    pub fn alpha(&self) -> f64 {
        self.analysis.alpha.unwrap_or_else(|| default_alpha(self.noise.sigma, self.solver.p))
    }
}
