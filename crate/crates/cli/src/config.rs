use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpline::estimator::{SolveOptions, DEFAULT_SIGMA};
use vpline::simulator::{PencilSpec, SimulationSpec};
use vpline::vp_detect::JLinkageParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum VpSource {
    /// True class labels; one VP fitted per class from that frame's noisy segments.
    Truth,
    /// Clusters found by J-linkage on the frame's segments.
    Jlinkage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub simulation: SimulationSpec,
    pub window_size: usize,
    pub solver: SolveOptions,
    pub line_sigma: f64,
    pub vp_sigma: f64,
    pub vp_source: VpSource,
    pub use_vp: bool,
    pub jlinkage: JLinkageParams,
    /// Labeled pencils written by `simulate --pencils`.
    pub pencils: PencilSpec,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Observations rewritten to the slope-degenerate configuration by `fim`.
    pub inject_slope_degenerate: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            simulation: SimulationSpec::default(),
            window_size: 10,
            solver: SolveOptions::default(),
            line_sigma: DEFAULT_SIGMA,
            vp_sigma: DEFAULT_SIGMA,
            vp_source: VpSource::Truth,
            use_vp: true,
            jlinkage: JLinkageParams::default(),
            pencils: PencilSpec::default(),
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            inject_slope_degenerate: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: vpline::Error| ConfigError::Invalid(e.to_string());
        self.simulation.scene.validate().map_err(invalid)?;
        self.simulation.trajectory.validate().map_err(invalid)?;
        self.simulation.render.validate().map_err(invalid)?;
        self.solver.validate().map_err(invalid)?;
        self.jlinkage.validate().map_err(invalid)?;
        if !(self.pencils.noise_sigma >= 0.0 && self.pencils.outlier_fraction >= 0.0) {
            return Err(ConfigError::Invalid("pencil noise and outlier fraction must be non-negative".into()));
        }
        if self.window_size < 2 {
            return Err(ConfigError::Invalid("window_size must be at least 2".into()));
        }
        if !(self.line_sigma > 0.0 && self.vp_sigma > 0.0) {
            return Err(ConfigError::Invalid("line_sigma and vp_sigma must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Simulation spec for one seed: the scene and the noise are both reseeded.
    pub fn simulation_for_seed(&self, seed: u64) -> SimulationSpec {
        let mut spec = self.simulation.clone();
        spec.scene.rng_seed = seed;
        spec.render.seed = seed;
        spec
    }
}
