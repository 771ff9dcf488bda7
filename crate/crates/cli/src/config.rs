//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use wignerflux::jumpseries::SeriesConfig;
use wignerflux::microcanon::{ShellConfig, ShellMeasure, Support};
use wignerflux::model::PotentialSpec;
use wignerflux::oracle::{DiagOptions, Grid};
use wignerflux::waveprop::MediumProfile;

use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides any seed given in other sections.
    #[serde(default)]
    pub seed: u64,
    pub potential: Option<PotentialSpec>,
    pub shell: Option<ShellSection>,
    pub series: Option<SeriesConfig>,
    pub observable: Option<ObservableSection>,
    pub oracle: Option<OracleSection>,
    pub beam: Option<BeamSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        if self.n == 0 || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(CliError::Config("grid needs n >= 1 and finite bounds".into()));
        }
        if self.n > 1 && self.stop <= self.start {
            return Err(CliError::Config(format!("grid stop {} must exceed start {}", self.stop, self.start)));
        }
        Ok(wignerflux::observables::uniform_grid(self.start, self.stop, self.n))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellSection {
    pub energy: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    pub burn_in: Option<f64>,
    pub stride: Option<f64>,
    #[serde(default = "default_energy_tol")]
    pub energy_tol: f64,
    #[serde(default = "default_drift_tol")]
    pub drift_tol: f64,
    #[serde(default = "default_shell_dt")]
    pub dt: f64,
    #[serde(default)]
    pub support: Support,
    #[serde(default)]
    pub measure: ShellMeasure,
    /// Read samples from this file instead of sampling.
    pub input: Option<PathBuf>,
}

fn default_samples() -> usize {
    ShellConfig::default().n_samples
}
fn default_energy_tol() -> f64 {
    ShellConfig::default().energy_tol
}
fn default_drift_tol() -> f64 {
    ShellConfig::default().drift_tol
}
fn default_shell_dt() -> f64 {
    ShellConfig::default().dt
}

impl ShellSection {
    pub fn to_config(&self, seed: u64) -> ShellConfig {
        ShellConfig {
            energy: self.energy,
            n_samples: self.n_samples,
            burn_in: self.burn_in,
            stride: self.stride,
            energy_tol: self.energy_tol,
            drift_tol: self.drift_tol,
            dt: self.dt,
            support: self.support,
            seed,
        }
    }
}

#[derive(Debug, Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableKind {
    #[default]
    FluxEta,
    Position,
    PositionSq,
    Momentum,
    MomentumSq,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSection {
    #[serde(default)]
    pub kind: ObservableKind,
    /// Width of the smeared barrier delta; defaults from the potential.
    pub smear: Option<f64>,
    pub t_grid: Option<GridSpec>,
    pub omega_grid: Option<GridSpec>,
    /// Damping of the spectral transform; defaults to `7 / t_max`.
    pub eps: Option<f64>,
    /// Time-series CSV used by `spectrum` instead of a fresh estimate.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub n: Option<usize>,
    #[serde(default)]
    pub e_max: f64,
    pub n_states: Option<usize>,
    pub decay_check_max_energy: Option<f64>,
    /// Shell energy and Lorentzian width of the exact microcanonical series.
    pub energy: Option<f64>,
    #[serde(default = "default_eps_e")]
    pub eps_e: f64,
}

fn default_eps_e() -> f64 {
    0.05
}

impl OracleSection {
    pub fn grid(&self, spec: &PotentialSpec) -> Result<Grid, CliError> {
        let d = wignerflux::oracle::default_grid(spec);
        Grid::new(self.x_min.unwrap_or(d.x_min), self.x_max.unwrap_or(d.x_max), self.n.unwrap_or(d.n))
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn options(&self) -> DiagOptions {
        DiagOptions {
            e_max: self.e_max,
            n_states: self.n_states,
            decay_check_max_energy: self.decay_check_max_energy,
            ..Default::default()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSection {
    pub profile: MediumProfile,
    pub waist: f64,
    pub center: Vec<f64>,
    pub tilt: Option<Vec<f64>>,
    #[serde(default = "default_rays")]
    pub n_rays: usize,
    pub z_grid: GridSpec,
    #[serde(default = "default_dz")]
    pub dz: f64,
    /// Apply scattering jumps using the `[series]` settings.
    #[serde(default)]
    pub scatter: bool,
}

fn default_rays() -> usize {
    10_000
}
fn default_dz() -> f64 {
    0.01
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default)]
    pub prefix: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            prefix: String::new(),
        }
    }
}

/// A parsed configuration together with the hash of its source text.
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
    pub path: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    Ok(Loaded {
        config,
        hash,
        path: path.to_path_buf(),
    })
}

impl RunConfig {
    pub fn potential(&self) -> Result<&PotentialSpec, CliError> {
        let p = self.potential.as_ref().ok_or_else(|| missing("potential"))?;
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn shell(&self) -> Result<&ShellSection, CliError> {
        self.shell.as_ref().ok_or_else(|| missing("shell"))
    }

    pub fn series(&self) -> Result<SeriesConfig, CliError> {
        let mut s = self.series.clone().ok_or_else(|| missing("series"))?;
        s.seed = self.seed;
        s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(s)
    }

    pub fn observable(&self) -> Result<&ObservableSection, CliError> {
        self.observable.as_ref().ok_or_else(|| missing("observable"))
    }

    pub fn oracle(&self) -> Result<&OracleSection, CliError> {
        self.oracle.as_ref().ok_or_else(|| missing("oracle"))
    }

    pub fn beam(&self) -> Result<&BeamSection, CliError> {
        self.beam.as_ref().ok_or_else(|| missing("beam"))
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing [{section}] section for this subcommand"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sample_config_parses() {
        let c: RunConfig = toml::from_str(
            r#"
seed = 4
[potential]
kind = "double-well"
[shell]
energy = -0.92
n_samples = 10
"#,
        )
        .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.shell().unwrap().to_config(c.seed).seed, 4);
        assert_eq!(c.output.directory, PathBuf::from("out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[shell]\nenergy = 1.0\nbogus = 2").is_err());
    }

    #[test]
    fn series_seed_follows_the_master_seed() {
        let c: RunConfig = toml::from_str("seed = 9\n[series]\nseed = 2\nmax_order = 1").unwrap();
        assert_eq!(c.series().unwrap().seed, 9);
    }

    #[test]
    fn descending_grid_is_a_config_error() {
        let g = GridSpec { start: 1.0, stop: 0.0, n: 3 };
        assert!(matches!(g.points(), Err(CliError::Config(_))));
    }
}
