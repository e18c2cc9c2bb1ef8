//! Pipeline configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::displacement::DescentOptions;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D};
use crate::mollifier::Mollifier;
use crate::phantom::{BoundaryMode, GaussianProcessSpec, InclusionSpec};
use crate::shear::{DescentMethod, Gauge, MuRecoveryConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    /// Side lengths of the domain, which starts at the origin.
    pub extent: [f64; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 300,
            ny: 300,
            extent: [1.0, 1.0],
        }
    }
}

impl GridConfig {
    pub fn grid(&self) -> Result<Grid2D> {
        let [lx, ly] = self.extent;
        if self.nx < 2 || self.ny < 2 || !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::Config(format!(
                "grid {}x{} over {lx}x{ly} is not usable",
                self.nx, self.ny
            )));
        }
        Grid2D::new(
            self.nx,
            self.ny,
            0.0,
            0.0,
            lx / (self.nx - 1) as f64,
            ly / (self.ny - 1) as f64,
        )
    }
}

/// Optical-index Gaussian process; the seed is the top-level one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonConfig {
    pub correlation_length: f64,
    pub mean: f64,
    pub std: f64,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        let d = GaussianProcessSpec::default();
        Self {
            correlation_length: d.correlation_length,
            mean: d.mean,
            std: d.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub mode: BoundaryMode,
    pub amplitude: f64,
    /// `bc.json`-style record, required for `custom_trace`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<PathBuf>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            mode: BoundaryMode::UniaxialCompression,
            amplitude: 0.005,
            trace_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub delta: f64,
    pub cond_max: f64,
    pub descent: DescentOptions,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            cond_max: 10.0,
            descent: DescentOptions::default(),
        }
    }
}

/// Serialized counterpart of [`MuRecoveryConfig`] with a constant `mu0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryConfig {
    pub mu0: f64,
    pub mu_bounds: [f64; 2],
    pub step0: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub gauge: Gauge,
    pub collar: f64,
    pub tikhonov: f64,
    pub log_parameterization: bool,
    pub method: DescentMethod,
    pub cg_max_iter: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        let d = MuRecoveryConfig::new(ScalarField2D::constant(Grid2D::unit_square(4).expect("tiny grid"), 1.0));
        Self {
            mu0: 1.0,
            mu_bounds: [d.mu_bounds.0, d.mu_bounds.1],
            step0: d.step0,
            tol: d.tol,
            max_iter: d.max_iter,
            gauge: d.gauge,
            collar: d.collar,
            tikhonov: d.tikhonov,
            log_parameterization: d.log_parameterization,
            method: d.method,
            cg_max_iter: d.cg_max_iter,
        }
    }
}

impl RecoveryConfig {
    pub fn to_recovery(&self, grid: &Grid2D) -> MuRecoveryConfig {
        MuRecoveryConfig {
            mu0: ScalarField2D::constant(*grid, self.mu0),
            mu_bounds: (self.mu_bounds[0], self.mu_bounds[1]),
            step0: self.step0,
            tol: self.tol,
            max_iter: self.max_iter,
            gauge: self.gauge,
            collar: self.collar,
            tikhonov: self.tikhonov,
            log_parameterization: self.log_parameterization,
            method: self.method,
            cg_max_iter: self.cg_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub epsilon: EpsilonConfig,
    #[serde(default)]
    pub mu: InclusionSpec,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seed() -> u64 {
    GaussianProcessSpec::default().seed
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            grid: GridConfig::default(),
            epsilon: EpsilonConfig::default(),
            mu: InclusionSpec::default(),
            boundary: BoundaryConfig::default(),
            estimation: EstimationConfig::default(),
            recovery: RecoveryConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; a relative `trace_file` is taken
    /// relative to the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(t), Some(dir)) = (&cfg.boundary.trace_file, path.parent()) {
            if t.is_relative() {
                cfg.boundary.trace_file = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn epsilon_spec(&self) -> GaussianProcessSpec {
        GaussianProcessSpec {
            correlation_length: self.epsilon.correlation_length,
            mean: self.epsilon.mean,
            std: self.epsilon.std,
            seed: self.seed,
        }
    }

    /// Checks every sub-spec before anything is computed.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let grid = self.grid.grid()?;
        if grid.nx < 8 || grid.ny < 8 {
            return Err(Error::Config("the pipeline needs at least 8x8 nodes".into()));
        }
        self.epsilon_spec().validate(&grid)?;
        self.mu.validate()?;
        if !self.boundary.amplitude.is_finite() {
            return Err(Error::Config("boundary amplitude must be finite".into()));
        }
        if self.boundary.mode == BoundaryMode::CustomTrace && self.boundary.trace_file.is_none() {
            return Err(Error::Config("custom_trace needs boundary.trace_file".into()));
        }
        let e = &self.estimation;
        Mollifier::new(e.delta).map_err(|_| Error::Config(format!("delta {} must be positive", e.delta)))?;
        if !(e.cond_max >= 1.0) {
            return Err(Error::Config(format!("cond_max {} must be at least 1", e.cond_max)));
        }
        if !(e.descent.tol >= 0.0) {
            return Err(Error::Config("descent tol must be non-negative".into()));
        }
        self.recovery.to_recovery(&grid).validate()
    }

    pub fn with_overrides(mut self, seed: Option<u64>, grid: Option<usize>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(n) = grid {
            self.grid.nx = n;
            self.grid.ny = n;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = PipelineConfig::from_json(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.grid.grid().unwrap().nx, 300);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(matches!(
            PipelineConfig::from_json(r#"{"schema_version": 1, "sed": 3}"#),
            Err(Error::Json(_))
        ));
        assert!(PipelineConfig::from_json(r#"{"schema_version": 1, "recovery": {"mu_0": 1}}"#).is_err());
        assert!(matches!(
            PipelineConfig::from_json(r#"{"schema_version": 2}"#),
            Err(Error::Config(_))
        ));
        assert!(PipelineConfig::from_json(r#"{"seed": 1}"#).is_err());
    }

    #[test]
    fn invariants_are_checked() {
        for bad in [
            r#"{"schema_version": 1, "recovery": {"mu_bounds": [0.0, 2.0]}}"#,
            r#"{"schema_version": 1, "estimation": {"delta": -1.0}}"#,
            r#"{"schema_version": 1, "grid": {"nx": 64, "ny": 64, "extent": [1.0, 1.0]}, "epsilon": {"correlation_length": 0.001, "mean": 1.0, "std": 1.0}}"#,
            r#"{"schema_version": 1, "boundary": {"mode": "custom_trace", "amplitude": 0.0}}"#,
            r#"{"schema_version": 1, "mu": {"background_mu": -1.0, "inclusions": []}}"#,
        ] {
            assert!(matches!(PipelineConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn overrides_and_round_trip() {
        let cfg = PipelineConfig::default()
            .with_overrides(Some(9), Some(64), Some("x".into()))
            .unwrap();
        assert_eq!((cfg.seed, cfg.grid.nx, cfg.grid.ny), (9, 64, 64));
        assert_eq!(cfg.epsilon_spec().seed, 9);
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(PipelineConfig::default().with_overrides(None, Some(4), None).is_err());
    }
}
