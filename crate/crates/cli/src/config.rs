//! Experiment configuration: one TOML document with a section per stage.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Acceptance check this scenario reproduces.
    pub criterion: usize,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: String,
    pub audit: AuditBlock,
    pub geometry: Option<GeometryBlock>,
    pub weight: Option<WeightBlock>,
    pub reaction: Option<ReactionBlock>,
    pub noise: Option<NoiseBlock>,
    pub solver: Option<SolverBlock>,
    pub rate: Option<RateBlock>,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> String {
    "runs".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    /// One of the built-in end-to-end checks, selected by `criterion`.
    Check,
    Ldp,
    Mdp,
    ControlledError,
    MdpError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditBlock {
    pub kind: AuditKind,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub samples: usize,
    /// `λ(ε)` spec for MDP runs, e.g. `"eps^-1/4"`.
    pub scale: Option<String>,
    /// Amplitude of the fixed control `A sin(t + j)` in error audits.
    pub control_amplitude: Option<f64>,
    /// Hölder exponent entering the MDP error envelope.
    pub alpha0: Option<f64>,
    /// Observable `ψ`: a named graph function.
    pub observable: Option<NamedFunction>,
    pub initial: Option<NamedFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFunction {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum GeometryBlock {
    Narrow {
        shape: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
        cells: usize,
    },
    Hamiltonian {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
        cells: usize,
        z_max: f64,
        #[serde(default = "default_label_grid")]
        label_grid: usize,
    },
}

fn default_label_grid() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightBlock {
    /// `unit`, or a profile form: `power`, `exp_sqrt`, `exp`, `constant`.
    pub form: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionBlock {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum NoiseBlock {
    /// Laplacian eigenmodes of a narrow shape.
    Spectral { modes: usize, eps0: Option<f64> },
    /// Plane waves `√w cos(ξ·x)`, `√w sin(ξ·x)`.
    PlaneWaves { atoms: Vec<[f64; 2]>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_theta() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltKind {
    Lq,
    Adjoint,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateBlock {
    /// Threshold `r` of `⟨X(T), ψ⟩ > r` in units of `σ`, the standard
    /// deviation of the linearized endpoint.
    pub target: Option<f64>,
    #[serde(default = "default_tilt")]
    pub tilt: TiltKind,
}

fn default_tilt() -> TiltKind {
    TiltKind::Lq
}

/// A config problem tied to a field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| format!("schema error: {e}"))?;
        cfg.validate().map_err(|e| format!("config error: {e}"))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenario.trim().is_empty() {
            return Err(err("scenario", "must not be empty"));
        }
        if !(1..=13).contains(&self.criterion) {
            return Err(err("criterion", format!("{} is not a known check (1..=13)", self.criterion)));
        }
        if self.audit.kind == AuditKind::Check {
            return Ok(());
        }
        let need = |present: bool, field: &str| if present { Ok(()) } else { Err(err(field, format!("is required for audit.kind = {:?}", self.audit.kind))) };
        need(self.geometry.is_some(), "geometry")?;
        need(self.reaction.is_some(), "reaction")?;
        need(self.noise.is_some(), "noise")?;
        need(self.solver.is_some(), "solver")?;
        need(self.audit.initial.is_some(), "audit.initial")?;
        if self.audit.epsilon.len() < 2 {
            return Err(err("audit.epsilon", "needs at least two values"));
        }
        if self.audit.epsilon.iter().any(|e| !(*e > 0.0)) {
            return Err(err("audit.epsilon", "values must be positive"));
        }
        if self.audit.samples < 100 {
            return Err(err("audit.samples", format!("{} is below the minimum of 100", self.audit.samples)));
        }
        let s = self.solver.as_ref().unwrap();
        if !(s.dt > 0.0) || !(s.horizon > s.dt) {
            return Err(err("solver.dt", format!("need 0 < dt < horizon, got dt = {}, horizon = {}", s.dt, s.horizon)));
        }
        if !(0.5..=1.0).contains(&s.theta) {
            return Err(err("solver.theta", format!("{} must lie in [0.5, 1]", s.theta)));
        }
        match self.audit.kind {
            AuditKind::Ldp | AuditKind::Mdp => {
                need(self.audit.observable.is_some(), "audit.observable")?;
                let rate = self.rate.as_ref().ok_or_else(|| err("rate", "section is required for rate audits"))?;
                match rate.target {
                    None => return Err(err("rate.target", "is required for rate audits")),
                    Some(t) if !(t > 0.0) => return Err(err("rate.target", format!("{t} must be positive"))),
                    _ => {}
                }
                if self.audit.kind == AuditKind::Mdp {
                    need(self.audit.scale.is_some(), "audit.scale")?;
                }
            }
            AuditKind::ControlledError => need(self.audit.control_amplitude.is_some(), "audit.control_amplitude")?,
            AuditKind::MdpError => {
                need(self.audit.control_amplitude.is_some(), "audit.control_amplitude")?;
                need(self.audit.scale.is_some(), "audit.scale")?;
                need(self.audit.alpha0.is_some(), "audit.alpha0")?;
            }
            AuditKind::Check => {}
        }
        Ok(())
    }
}
