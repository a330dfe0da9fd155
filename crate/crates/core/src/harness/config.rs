//! Run configuration files.
//!
//! A configuration holds either a relay `scenario` or a generic `model`
//! document, together with the integration and annealing settings:
//!
//! ```json
//! {
//!   "scenario": { "users": [[4, 0]], "uavs": [[1, 1]], "base": [0, 0], "beta": 1.0 },
//!   "dt": 0.1,
//!   "t_end": 10.0,
//!   "k0": 1.0,
//!   "mode": "exact",
//!   "anneal": { "beta_min": 0.1, "growth": 1.5 }
//! }
//! ```
//!
//! Generic models have static prescribed parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::controller::{ControlConfig, PrescribedDynamics, RefreshMode, StaticDynamics};
use crate::model::io::ModelDocument;
use crate::model::{validate_model, ModelSpec, ParameterVector};
use crate::scenario::{build_model, UavScenario};
use crate::soft_solver::AnnealSchedule;

fn default_dt() -> f64 {
    0.01
}

fn default_t_end() -> f64 {
    10.0
}

fn default_k0() -> f64 {
    1.0
}

fn default_zero_threshold() -> f64 {
    1e-9
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<UavScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelDocument>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_k0")]
    pub k0: f64,
    #[serde(default)]
    pub mode: RefreshMode,
    #[serde(default = "default_zero_threshold")]
    pub zero_threshold: f64,
    /// Cap on `‖u‖₂`. Absent means one scene diameter per unit time for
    /// scenarios and no cap for generic models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_cap: Option<f64>,
    /// Baseline re-optimization period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolve_every: Option<f64>,
    /// Seed of the annealing kicks and the baseline restarts.
    #[serde(default)]
    pub seed: u64,
    /// Anneal the manipulable parameters before the run starts.
    #[serde(default = "default_true")]
    pub anneal_start: bool,
    /// Schedule; `beta_max` defaults to the model's `β`, which is also the
    /// operating temperature of the run.
    #[serde(default)]
    pub anneal: AnnealSettings,
}

/// Annealing settings as written in a configuration; unset fields take the
/// [`AnnealSchedule`] defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_point_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_inner_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,
}

/// A model ready to simulate.
#[derive(Debug)]
pub struct Problem {
    pub model: ModelSpec,
    pub params: ParameterVector,
    pub dynamics: Box<dyn PrescribedDynamics>,
    /// Source states whose routes are recorded.
    pub sources: Vec<usize>,
    /// Default gain cap derived from the scene.
    pub default_gain_cap: f64,
    /// Lowest `β` the default schedule may start from.
    pub default_beta_min: Option<f64>,
}

impl RunConfig {
    pub fn from_scenario(scenario: UavScenario) -> Self {
        RunConfig {
            scenario: Some(scenario),
            model: None,
            dt: default_dt(),
            t_end: default_t_end(),
            k0: default_k0(),
            mode: RefreshMode::Exact,
            zero_threshold: default_zero_threshold(),
            gain_cap: None,
            resolve_every: None,
            seed: 0,
            anneal_start: true,
            anneal: AnnealSettings::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        match (&self.scenario, &self.model) {
            (Some(_), Some(_)) => return bad("give either `scenario` or `model`, not both"),
            (None, None) => return bad("missing `scenario` or `model` section"),
            _ => {}
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be non-negative");
        }
        if matches!(self.resolve_every, Some(r) if !(r > 0.0)) {
            return bad("resolve_every must be positive");
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem, HarnessError> {
        self.validate()?;
        if let Some(sc) = &self.scenario {
            let (model, params, motion) = build_model(sc)?;
            return Ok(Problem {
                model,
                params,
                dynamics: Box::new(motion),
                sources: (0..sc.n_users()).collect(),
                default_gain_cap: sc.diameter(),
                default_beta_min: sc.annealing_floor(),
            });
        }
        let doc = self.model.as_ref().expect("validated");
        let (model, params) = doc.build()?;
        validate_model(&model, &params).into_result()?;
        let sources = (0..model.n_states())
            .filter(|&s| s != model.terminal())
            .collect();
        Ok(Problem {
            model,
            params,
            dynamics: Box::new(StaticDynamics),
            sources,
            default_gain_cap: f64::INFINITY,
            default_beta_min: None,
        })
    }

    /// The annealing schedule for `problem`.
    pub fn schedule(&self, problem: &Problem) -> AnnealSchedule {
        let d = AnnealSchedule::default();
        let a = &self.anneal;
        let beta_max = a.beta_max.unwrap_or(problem.model.beta());
        let beta_min = a
            .beta_min
            .or(problem.default_beta_min)
            .unwrap_or(d.beta_min);
        AnnealSchedule {
            beta_min: beta_min.min(beta_max),
            beta_max,
            growth: a.growth.unwrap_or(d.growth),
            fixed_point_tol: a.fixed_point_tol.unwrap_or(d.fixed_point_tol),
            max_fixed_point_iter: d.max_fixed_point_iter,
            gradient_tol: a.gradient_tol.unwrap_or(d.gradient_tol),
            max_inner_iterations: a.max_inner_iterations.unwrap_or(d.max_inner_iterations),
            perturbation: a.perturbation,
            seed: self.seed,
        }
    }

    pub fn control(&self, problem: &Problem) -> ControlConfig {
        ControlConfig {
            k0: self.k0,
            dt: self.dt,
            zero_threshold: self.zero_threshold,
            mode: self.mode,
            gain_cap: self.gain_cap.unwrap_or(problem.default_gain_cap),
            ..ControlConfig::default()
        }
    }
}
