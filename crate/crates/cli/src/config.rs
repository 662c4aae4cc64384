//! Run configuration read from a TOML file.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use avm_core::lattice::ForcingTerm;
use avm_core::melnikov::RootSearchSpec;
use avm_core::numerics::{IntegratorSpec, QuadratureSpec};
use avm_core::persist::{ShootingSpec, Unknowns};
use avm_core::slowflow::SlowFlowParams;
use serde::Deserialize;
use sha2::{Digest, Sha256};

/// Problem with the configuration or command line; exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
    pub lattice: Option<LatticeSection>,
    pub slowflow: Option<SlowFlowSection>,
    pub orbits: Option<OrbitsSection>,
    pub melnikov: Option<MelnikovSection>,
    pub persist: Option<PersistSection>,
}

/// Parsed config plus the SHA-256 of the file it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn load(path: &Path) -> anyhow::Result<Loaded> {
    let bytes = std::fs::read(path).map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| config_error(format!("config {} is not UTF-8: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(text).map_err(|e| config_error(format!("invalid config {}: {e}", path.display())))?;
    let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok(Loaded { config, sha256 })
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> anyhow::Result<&'a T> {
    section.as_ref().ok_or_else(|| config_error(format!("config has no [{name}] section")))
}

/// `steps` evenly spaced nodes from `start` to `stop` inclusive, or
/// geometrically spaced when `log` is set.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    #[serde(default)]
    pub log: bool,
}

impl Grid {
    pub fn nodes(&self, name: &str) -> anyhow::Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(config_error(format!("{name}: steps must be at least 1")));
        }
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err(config_error(format!("{name}: bounds must be finite")));
        }
        if self.log && !(self.start > 0.0 && self.stop > 0.0) {
            return Err(config_error(format!("{name}: log spacing needs positive bounds")));
        }
        if self.steps == 1 {
            return Ok(vec![self.start]);
        }
        let m = (self.steps - 1) as f64;
        Ok((0..self.steps)
            .map(|i| {
                let t = i as f64 / m;
                if self.log {
                    (self.start.ln() + t * (self.stop.ln() - self.start.ln())).exp()
                } else {
                    self.start + t * (self.stop - self.start)
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeModel {
    Exact,
    Reduced,
    Both,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub n: usize,
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub forcing: Vec<ForcingTerm>,
    /// Standing-wave index of the initial displacement.
    pub mode: usize,
    /// Transverse amplitude of the initial displacement.
    pub amplitude: f64,
    pub horizon: f64,
    #[serde(default = "default_lattice_samples")]
    pub samples: usize,
    #[serde(default = "default_lattice_model")]
    pub model: LatticeModel,
    #[serde(default)]
    pub velocities: bool,
}

fn default_lattice_samples() -> usize {
    1001
}

fn default_lattice_model() -> LatticeModel {
    LatticeModel::Exact
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowFlowSection {
    pub base_freq: f64,
    pub harmonic: u32,
}

impl SlowFlowSection {
    pub fn params(&self) -> anyhow::Result<SlowFlowParams> {
        SlowFlowParams::unforced(self.base_freq, self.harmonic).map_err(|e| config_error(format!("[slowflow]: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitsSection {
    /// Starting angles on `Delta = pi/2`, each in `(0, pi/4]`.
    pub theta0: Vec<f64>,
    #[serde(default = "one")]
    pub periods: f64,
    #[serde(default = "default_orbit_samples")]
    pub samples: usize,
    /// Amplitude grid for the family export; needs `[slowflow]`.
    pub family_rho: Option<Grid>,
}

fn one() -> f64 {
    1.0
}

fn default_orbit_samples() -> usize {
    400
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelnikovSection {
    #[serde(default = "default_beta_grid")]
    pub beta1: Grid,
    /// Amplitude grid given directly.
    pub rho: Option<Grid>,
    /// Amplitude grid given through the orbit level `K(rho)`.
    pub level: Option<Grid>,
    #[serde(default)]
    pub roots: RootsSection,
}

fn default_beta_grid() -> Grid {
    Grid {
        start: 0.0,
        stop: 2.0 * PI,
        steps: 73,
        log: false,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RootsSection {
    /// Refine every sign change of `Mtilde` found on the table grid.
    pub grid: bool,
    /// Continue the four asymptotic roots from `start_level` down to `stop_level`.
    pub continuation: bool,
    pub start_level: f64,
    pub stop_level: f64,
    pub search: RootSearchSpec,
}

impl Default for RootsSection {
    fn default() -> Self {
        Self {
            grid: true,
            continuation: false,
            start_level: 1e-3,
            stop_level: 1e-1,
            search: RootSearchSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersistSection {
    /// Orbit level `K(rho)` at which the Melnikov root is located.
    pub level: f64,
    #[serde(default)]
    pub seed_beta1: f64,
    /// Added to the root phase before shooting; nonzero values probe the
    /// off-root case.
    #[serde(default)]
    pub beta1_offset: f64,
    pub eps: Vec<f64>,
    #[serde(default = "default_unknowns")]
    pub unknowns: Unknowns,
    #[serde(default)]
    pub shooting: ShootingSpec,
    #[serde(default)]
    pub root_search: RootSearchSpec,
}

fn default_unknowns() -> Unknowns {
    Unknowns::State
}

impl MelnikovSection {
    pub fn rhos(&self, params: &SlowFlowParams) -> anyhow::Result<Vec<f64>> {
        match (&self.rho, &self.level) {
            (Some(g), None) => g.nodes("melnikov.rho"),
            (None, Some(g)) => {
                let levels = g.nodes("melnikov.level")?;
                if let Some(bad) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
                    return Err(config_error(format!("melnikov.level: {bad} is outside (0, 1)")));
                }
                Ok(levels.iter().map(|&l| params.rho_for_level(l)).collect())
            }
            (Some(_), Some(_)) => Err(config_error("[melnikov]: give either rho or level, not both")),
            (None, None) => Err(config_error("[melnikov]: missing field `rho` or `level`")),
        }
    }
}
