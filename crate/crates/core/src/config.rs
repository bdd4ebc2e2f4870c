//! Experiment configuration read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{EventConfig, Half};
use crate::error::{Error, Result};
use crate::model::{Drift, ModelBox};
use crate::resonance::ZoneConstants;
use crate::systems::{Domain, Preset, PresetParams, SystemSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianKind {
    Duffing,
    Pendulum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub hamiltonian: HamiltonianKind,
    pub preset: Preset,
    pub params: PresetParams,
    pub z: Vec<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { hamiltonian: HamiltonianKind::Duffing, preset: Preset::Friction, params: PresetParams::default(), z: vec![1.0] }
    }
}

impl SystemConfig {
    pub fn build(&self) -> SystemSpec {
        let pert = std::sync::Arc::new(crate::systems::PresetPerturbation { preset: self.preset, params: self.params });
        match self.hamiltonian {
            HamiltonianKind::Duffing => SystemSpec::duffing_with(pert),
            HamiltonianKind::Pendulum => SystemSpec::pendulum(pert),
        }
    }
}

/// A scalar or a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChartConfig {
    pub domains: Vec<Domain>,
    pub h_min: f64,
    pub h_max: f64,
    pub n_h: usize,
    /// Slow-variable grid; the system's `z` when empty.
    pub z_grid: Vec<Vec<f64>>,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self { domains: vec![Domain::B1, Domain::B2, Domain::B3], h_min: 1e-9, h_max: 1.0, n_h: 50, z_grid: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaConfig {
    pub lambda_nodes: usize,
}

impl Default for ThetaConfig {
    fn default() -> Self {
        Self { lambda_nodes: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonanceConfig {
    pub omega_min: f64,
    pub omega_max: f64,
    /// Bound on `s1 + s2`.
    pub order: u32,
    /// Decay constant of the Fourier coefficients; estimated at `h_ref` when absent.
    pub c_f: Option<f64>,
    pub h_ref: f64,
    /// Condition B' is checked for `s2` up to this value.
    pub bprime_max_s2: u32,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        Self { omega_min: 0.05, omega_max: 1.0, order: 20, c_f: None, h_ref: 0.1, bprime_max_s2: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceSource {
    /// `F(q) = mean + amplitude sin q`.
    Fixture,
    /// `F*` of the configured system at resonance `s2/s1`.
    Forcing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub source: ForceSource,
    pub mean: f64,
    pub amplitude: f64,
    pub s1: u32,
    pub s2: u32,
    /// Index 1, 2 or 3 of `F*_{s,i}`.
    pub component: usize,
    pub eps1: f64,
    pub eps2: Vec<f64>,
    pub drift: Drift,
    pub bounds: ModelBox,
    pub n: usize,
    pub window: f64,
    pub offset: f64,
    /// Energy offsets for the exit-time scan.
    pub exit_scan: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            source: ForceSource::Fixture,
            mean: 1.0,
            amplitude: 2.0,
            s1: 2,
            s2: 1,
            component: 3,
            eps1: 0.0,
            eps2: vec![0.0, 1e-3, 2e-3],
            drift: Drift::friction(),
            bounds: ModelBox::default(),
            n: 10_000,
            window: 0.015,
            offset: 0.0,
            exit_scan: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Capture,
    Scaling,
    Jump,
    Scattering,
}

/// Initial box around the orbit with energy offset `h0` in B3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub h0: f64,
    pub delta_action: f64,
    pub delta_z: f64,
    pub delta_phase: f64,
    pub delta_lambda: f64,
    pub lambda_half: Half,
}

impl Default for InitialConfig {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self { h0: 0.2, delta_action: 0.01, delta_z: 0.0, delta_phase: pi, delta_lambda: pi, lambda_half: Half::Both }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub experiment: Experiment,
    pub n: usize,
    pub initial: InitialConfig,
    pub events: EventConfig,
    /// Level used by the jump experiment.
    pub h_ref: f64,
    /// Resonance used by the scattering experiment.
    pub s1: u32,
    pub s2: u32,
    pub write_runs: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Capture,
            n: 2000,
            initial: InitialConfig::default(),
            events: EventConfig::default(),
            h_ref: 0.1,
            s1: 3,
            s2: 1,
            write_runs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps: OneOrMany,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub zones: ZoneConstants,
    #[serde(default)]
    pub chart: ChartConfig,
    #[serde(default)]
    pub theta: ThetaConfig,
    #[serde(default)]
    pub resonances: ResonanceConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_eps() -> OneOrMany {
    OneOrMany::One(1e-3)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            eps: default_eps(),
            system: SystemConfig::default(),
            zones: ZoneConstants::default(),
            chart: ChartConfig::default(),
            theta: ThetaConfig::default(),
            resonances: ResonanceConfig::default(),
            model: ModelConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Every field, defaults included.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn eps_values(&self) -> Vec<f64> {
        self.eps.values()
    }

    pub fn z_grid(&self) -> Vec<Vec<f64>> {
        if self.chart.z_grid.is_empty() {
            vec![self.system.z.clone()]
        } else {
            self.chart.z_grid.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let eps = self.eps_values();
        if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad(format!("eps must lie in (0, 1): {eps:?}"));
        }
        let nz = self.system.build().z_dim();
        if self.system.z.len() != nz {
            return bad(format!("system.z has {} entries, the hamiltonian needs {nz}", self.system.z.len()));
        }
        if self.chart.n_h < 4 || !(self.chart.h_min > 0.0 && self.chart.h_max > self.chart.h_min) {
            return bad("chart needs n_h >= 4 and 0 < h_min < h_max".into());
        }
        if self.ensemble.n == 0 {
            return bad("ensemble.n must be positive".into());
        }
        if self.model.n == 0 {
            return bad("model.n must be positive".into());
        }
        if !(1..=3).contains(&self.model.component) {
            return bad("model.component must be 1, 2 or 3".into());
        }
        if self.model.s1 == 0 || self.model.s2 == 0 || self.ensemble.s1 == 0 || self.ensemble.s2 == 0 {
            return bad("resonance numbers must be positive".into());
        }
        if self.model.eps2.iter().any(|e| !(*e >= 0.0)) {
            return bad("model.eps2 must be nonnegative".into());
        }
        if !(self.resonances.omega_min > 0.0 && self.resonances.omega_max > self.resonances.omega_min) {
            return bad("resonances need 0 < omega_min < omega_max".into());
        }
        if self.resonances.order < 2 {
            return bad("resonances.order must be at least 2".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves() {
        let c = ExperimentConfig::from_toml("schema_version = 1\n").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let again = ExperimentConfig::from_toml(&c.resolved().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "schema_version = 2\n",
            "schema_version = 1\nbogus = 3\n",
            "schema_version = 1\n[ensemble]\nn = 0\n",
            "schema_version = 1\n[system]\npreset = \"nope\"\n",
            "",
        ] {
            let e = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(e.kind(), "CONFIG_INVALID", "{text}");
        }
        let c = ExperimentConfig::from_toml("schema_version = 1\neps = [1e-2, 1e-3]\n").unwrap();
        assert_eq!(c.eps_values(), vec![1e-2, 1e-3]);
    }
}
