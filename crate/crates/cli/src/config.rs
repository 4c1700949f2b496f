use std::path::{Path, PathBuf};

use fermi_echo::io::short_hash;
use fermi_echo::lattice::{CellPattern, LatticeGeometry, PlaquetteTiling};
use fermi_echo::prepare::GradientVariant;
use fermi_echo::pulse;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("`{field}`: {msg}")]
    Field { field: &'static str, msg: String },
}

fn field(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EchoMode {
    /// Exact imaginary-time shifts, no shot noise.
    Exact,
    /// Exact shifts, binomial shot noise.
    Sampled,
    /// Shifts from the optimized pulse files, binomial shot noise.
    Pulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IteChoice {
    ExactGlobal,
    ExactLocalTiled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub nx: usize,
    pub ny: usize,
    pub unit_cell: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_u")]
    pub u: f64,
}

fn default_u() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub dt: f64,
    pub sweep_times: Vec<f64>,
    pub infidelity_target: f64,
    pub gradient: String,
}

impl Default for PrepareSection {
    fn default() -> Self {
        Self {
            dt: 0.01,
            sweep_times: vec![10.0, 20.0, 40.0, 80.0, 160.0, 240.0],
            infidelity_target: 1e-3,
            gradient: "linear".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub theta: f64,
    pub dt: f64,
    pub restarts: usize,
    pub durations: Vec<f64>,
    pub max_iters: usize,
    pub fidelity_floor: f64,
    pub stop_fidelity: f64,
}

impl Default for PulseSection {
    fn default() -> Self {
        Self {
            theta: 0.1,
            dt: pulse::DEFAULT_DT,
            restarts: pulse::DEFAULT_RESTARTS,
            durations: pulse::duration_grid(),
            max_iters: 400,
            fidelity_floor: pulse::FIDELITY_FLOOR,
            stop_fidelity: 0.9995,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoSection {
    pub mode: EchoMode,
    pub ite: IteChoice,
    pub dt: f64,
    pub tau_max: f64,
    pub theta: f64,
    pub samples: usize,
    /// Number of seeds, starting at the run seed.
    pub ensemble: usize,
    pub subtract_mean_energy: bool,
}

impl Default for EchoSection {
    fn default() -> Self {
        Self {
            mode: EchoMode::Exact,
            ite: IteChoice::ExactGlobal,
            dt: 0.1,
            tau_max: 10.0,
            theta: 0.1,
            samples: 100,
            ensemble: 1,
            subtract_mean_energy: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterChoice {
    pub delta: f64,
    pub tau_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdosSection {
    pub filters: Vec<FilterChoice>,
    pub energy_points: usize,
}

impl Default for LdosSection {
    fn default() -> Self {
        Self {
            filters: vec![
                FilterChoice { delta: 0.6, tau_max: 10.0 / 3.0 },
                FilterChoice { delta: 0.4, tau_max: 20.0 / 3.0 },
                FilterChoice { delta: 0.2, tau_max: 10.0 },
            ],
            energy_points: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub lattice: LatticeSection,
    pub model: ModelSection,
    #[serde(default)]
    pub prepare: PrepareSection,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub echo: EchoSection,
    #[serde(default)]
    pub ldos: LdosSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that affects results; the output directory is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        short_hash(c.to_toml())
    }

    pub fn geometry(&self) -> Result<LatticeGeometry, ConfigError> {
        LatticeGeometry::new(self.lattice.nx, self.lattice.ny).map_err(|e| field("lattice", e.to_string()))
    }

    pub fn pattern(&self) -> Result<CellPattern, ConfigError> {
        self.lattice.unit_cell.parse().map_err(|e: fermi_echo::Error| field("lattice.unit_cell", e.to_string()))
    }

    pub fn tiling(&self) -> Result<(LatticeGeometry, PlaquetteTiling), ConfigError> {
        let geom = self.geometry()?;
        let tiling = PlaquetteTiling::new(&geom, self.pattern()?).map_err(|e| field("lattice", e.to_string()))?;
        Ok((geom, tiling))
    }

    pub fn gradient(&self) -> Result<GradientVariant, ConfigError> {
        self.prepare.gradient.parse().map_err(|e: fermi_echo::Error| field("prepare.gradient", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tiling()?;
        self.gradient()?;
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field(name, format!("must be positive, got {v}")))
            }
        };
        if !self.model.u.is_finite() {
            return Err(field("model.u", "must be finite"));
        }
        positive("prepare.dt", self.prepare.dt)?;
        if self.prepare.sweep_times.is_empty() || self.prepare.sweep_times.iter().any(|t| !(*t > 0.0)) {
            return Err(field("prepare.sweep_times", "need at least one positive sweep time"));
        }
        positive("prepare.infidelity_target", self.prepare.infidelity_target)?;
        positive("pulse.theta", self.pulse.theta)?;
        positive("pulse.dt", self.pulse.dt)?;
        if self.pulse.restarts == 0 {
            return Err(field("pulse.restarts", "must be at least 1"));
        }
        if self.pulse.durations.is_empty() || self.pulse.durations.iter().any(|d| !(*d > 0.0)) {
            return Err(field("pulse.durations", "need at least one positive duration"));
        }
        if !(0.0..=1.0).contains(&self.pulse.fidelity_floor) {
            return Err(field("pulse.fidelity_floor", "must lie in [0, 1]"));
        }
        positive("echo.dt", self.echo.dt)?;
        positive("echo.theta", self.echo.theta)?;
        if !(self.echo.tau_max >= 0.0) {
            return Err(field("echo.tau_max", "must be non-negative"));
        }
        if self.echo.samples == 0 {
            return Err(field("echo.samples", "must be at least 1"));
        }
        if self.echo.ensemble == 0 {
            return Err(field("echo.ensemble", "must be at least 1"));
        }
        if self.echo.mode == EchoMode::Pulse && (self.echo.theta - self.pulse.theta).abs() > 1e-12 {
            return Err(field("echo.theta", "pulse mode needs echo.theta equal to pulse.theta"));
        }
        for f in &self.ldos.filters {
            positive("ldos.filters.delta", f.delta)?;
            if !(f.tau_max > 0.0) || f.tau_max > self.echo.tau_max + 1e-9 {
                return Err(field("ldos.filters.tau_max", format!("{} outside (0, echo.tau_max]", f.tau_max)));
            }
        }
        if self.ldos.energy_points < 3 {
            return Err(field("ldos.energy_points", "need at least three points"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[lattice]\nnx = 4\nny = 2\nunit_cell = \"AAAA\"\n[model]\nu = 8.0\n";

    #[test]
    fn round_trip() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        let mut moved = cfg.clone();
        moved.out = "elsewhere".into();
        assert_eq!(moved.hash(), cfg.hash());
        moved.seed += 1;
        assert_ne!(moved.hash(), cfg.hash());
    }

    #[test]
    fn field_level_errors() {
        let odd = MINIMAL.replace("nx = 4", "nx = 3");
        assert!(matches!(RunConfig::from_toml(&odd), Err(ConfigError::Field { field: "lattice", .. })));
        let bad = format!("{MINIMAL}[echo]\ntheta = -1.0\n");
        assert!(matches!(RunConfig::from_toml(&bad), Err(ConfigError::Field { field: "echo.theta", .. })));
        let unknown = format!("{MINIMAL}[echo]\nthetta = 1.0\n");
        assert!(matches!(RunConfig::from_toml(&unknown), Err(ConfigError::Syntax(_))));
    }
}
