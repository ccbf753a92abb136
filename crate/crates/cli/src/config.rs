//! Run configuration files.

use std::path::Path;

use epdt_core::criticality::SystemParams;
use epdt_core::data::DataSpec;
use epdt_core::sim::{auto_half_length, SimControls};
use epdt_core::spectral::Grid;
use epdt_core::tolerances::{RTOL_MAX, RTOL_MIN};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA: &str = "epdt-config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub params: SystemParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifyConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// Box half length: a number, or `"auto"` for the support envelope at
/// `t_max` plus 20%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HalfLength {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub points: usize,
    pub half_length: HalfLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl_safety: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_decade: Option<usize>,
    #[serde(default)]
    pub check_support: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Store full states this often; needed by `certify`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_until: Option<f64>,
}

fn default_directory() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_directory(),
            formats: default_formats(),
            snapshot_interval: None,
            snapshot_until: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub p_range: (f64, f64),
    pub q_range: (f64, f64),
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    /// Which equation's coefficients to use, 1 or 2.
    #[serde(default = "one")]
    pub equation: u8,
    pub kappa: f64,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default = "forty")]
    pub per_decade: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceConfig>,
}

fn one() -> u8 {
    1
}

fn forty() -> usize {
    40
}

fn two() -> f64 {
    2.0
}

fn thousand() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub radii: Vec<f64>,
    /// Fixed time scale; `d = R` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default = "two")]
    pub r_exponent: f64,
    #[serde(default = "thousand")]
    pub cutoff_resolution: usize,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    /// Checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA {
            return Err(config_err(format!(
                "schema `{}` is not supported, expected `{SCHEMA}`",
                self.schema
            )));
        }
        self.params.validate().map_err(|e| config_err(e.to_string()))?;
        if let Some(g) = &self.grid {
            if g.dim != self.params.n as usize {
                return Err(config_err(format!(
                    "grid.dim = {} but params.n = {}",
                    g.dim, self.params.n
                )));
            }
            Grid::new(g.dim, g.points, 1.0).map_err(|e| config_err(e.to_string()))?;
            if let HalfLength::Fixed(l) = g.half_length {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(config_err("grid.half_length must be positive"));
                }
            }
        }
        if let Some(t) = &self.time {
            if !(t.t_max > 1.0 && t.t_max.is_finite()) {
                return Err(config_err("time.t_max must exceed 1"));
            }
            if let Some(r) = t.rel_tol {
                if !(RTOL_MIN..=RTOL_MAX).contains(&r) {
                    return Err(config_err(format!(
                        "time.rel_tol must lie in [{RTOL_MIN:e}, {RTOL_MAX:e}]"
                    )));
                }
            }
        }
        if let Some(d) = &self.data {
            d.validate().map_err(|e| config_err(e.to_string()))?;
        }
        if let Some(dt) = self.outputs.snapshot_interval {
            if !(dt > 0.0) {
                return Err(config_err("outputs.snapshot_interval must be positive"));
            }
        }
        if let Some(l) = &self.linear {
            if l.equation != 1 && l.equation != 2 {
                return Err(config_err("linear.equation must be 1 or 2"));
            }
            if !(l.t_start >= 1.0 && l.t_end > l.t_start) {
                return Err(config_err("linear needs 1 <= t_start < t_end"));
            }
        }
        if let Some(c) = &self.certify {
            if c.radii.is_empty() || c.radii.iter().any(|&r| !(r >= 1.0)) {
                return Err(config_err("certify.radii must be a nonempty list of values >= 1"));
            }
        }
        Ok(())
    }

    pub fn require_grid(&self) -> Result<&GridConfig, CliError> {
        self.grid.as_ref().ok_or_else(|| config_err("missing field `grid`"))
    }

    pub fn require_time(&self) -> Result<&TimeConfig, CliError> {
        self.time.as_ref().ok_or_else(|| config_err("missing field `time`"))
    }

    pub fn require_data(&self) -> Result<&DataSpec, CliError> {
        self.data.as_ref().ok_or_else(|| config_err("missing field `data`"))
    }

    /// The concrete grid; `auto` needs `time` and `data`.
    pub fn build_grid(&self) -> Result<Grid, CliError> {
        let g = self.require_grid()?;
        let l = match g.half_length {
            HalfLength::Fixed(l) => l,
            HalfLength::Auto(_) => {
                let t_max = self.require_time()?.t_max;
                let r0 = self.require_data()?.support_radius(g.dim);
                let mut l = auto_half_length(self.params.m, t_max, r0);
                if let Some(c) = &self.certify {
                    let r_max = c.radii.iter().copied().fold(0.0, f64::max);
                    l = l.max(1.05 * r_max.powf(self.params.m + 1.0));
                }
                l
            }
        };
        Grid::new(g.dim, g.points, l).map_err(|e| config_err(e.to_string()))
    }

    pub fn controls(&self) -> Result<SimControls, CliError> {
        let t = self.require_time()?;
        let d = SimControls::default();
        Ok(SimControls {
            rel_tol: t.rel_tol.unwrap_or(d.rel_tol),
            blowup_factor: t.blowup_factor.unwrap_or(d.blowup_factor),
            dt_floor: t.dt_floor.unwrap_or(d.dt_floor),
            cfl_safety: t.cfl_safety.unwrap_or(d.cfl_safety),
            samples_per_decade: t.samples_per_decade.unwrap_or(d.samples_per_decade),
            snapshot_interval: self.outputs.snapshot_interval,
            snapshot_until: self.outputs.snapshot_until,
            check_support: t.check_support,
            max_steps: t.max_steps.unwrap_or(d.max_steps),
        })
    }

    pub fn wants(&self, f: Format) -> bool {
        self.outputs.formats.contains(&f)
    }

    /// SHA-256 of the canonical JSON form, with the output directory blanked
    /// so that runs differing only in where they write share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.outputs.directory.clear();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
