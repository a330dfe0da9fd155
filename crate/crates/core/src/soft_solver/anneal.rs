//! Deterministic annealing over `β` for the static problem.
//!
//! For each `β` of a geometric schedule the manipulable parameters descend
//! the aggregate free energy `𝒱(Υ) = Σ_s w(s) V*(s)` using analytic
//! gradients, with Barzilai-Borwein trial steps safeguarded by a backtracking
//! line search. Between temperatures the manipulable block receives a small
//! isotropic Gaussian kick so that symmetric configurations can split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    gibbs_policy, solve_fixed_point, FixedPointOptions, SoftPolicy, SolverError, ValueTables,
};
use crate::model::{ModelSpec, ParameterVector};
use crate::numeric::{dot, norm_inf};
use crate::sensitivity::{assemble_stacks, DerivativeStacks};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    /// Geometric growth factor `τ > 1`.
    pub growth: f64,
    pub fixed_point_tol: f64,
    pub max_fixed_point_iter: usize,
    /// Stop descending at a temperature once `‖F‖_∞` falls below this.
    pub gradient_tol: f64,
    pub max_inner_iterations: usize,
    /// Standard deviation of the kick between temperatures. `None` means
    /// `1e-3` times the extent of the state parameters.
    pub perturbation: Option<f64>,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            beta_min: 0.1,
            beta_max: 100.0,
            growth: 1.5,
            fixed_point_tol: 1e-11,
            max_fixed_point_iter: super::DEFAULT_MAX_ITER,
            gradient_tol: 1e-6,
            max_inner_iterations: 500,
            perturbation: None,
            seed: 0,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidSchedule(m.to_string()));
        if !(self.beta_min > 0.0 && self.beta_min.is_finite()) {
            return bad("beta_min must be positive");
        }
        if !(self.beta_max >= self.beta_min && self.beta_max.is_finite()) {
            return bad("beta_max must be finite and at least beta_min");
        }
        if !(self.growth > 1.0) {
            return bad("growth must exceed 1");
        }
        if !(self.fixed_point_tol > 0.0 && self.gradient_tol >= 0.0) {
            return bad("tolerances must be positive");
        }
        if matches!(self.perturbation, Some(s) if !(s >= 0.0)) {
            return bad("perturbation must be non-negative");
        }
        Ok(())
    }

    /// `β_k = β_min·τ^k` up to `β_max`, with `β_max` appended if the
    /// geometric sequence does not land on it.
    pub fn betas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut b = self.beta_min;
        while b <= self.beta_max * (1.0 + 1e-12) {
            out.push(b);
            b *= self.growth;
        }
        if out
            .last()
            .is_some_and(|&l| l < self.beta_max * (1.0 - 1e-12))
        {
            out.push(self.beta_max);
        }
        out
    }

    fn fixed_point(&self) -> FixedPointOptions {
        FixedPointOptions {
            tol: self.fixed_point_tol,
            max_iter: self.max_fixed_point_iter,
        }
    }
}

/// Summary of the descent at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaStage {
    pub beta: f64,
    pub iterations: usize,
    pub objective: f64,
    pub f_inf: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct AnnealOutcome {
    /// The model at `β_max`.
    pub model: ModelSpec,
    pub params: ParameterVector,
    pub tables: ValueTables,
    pub policy: SoftPolicy,
    pub stacks: DerivativeStacks,
    pub objective: f64,
    pub stages: Vec<BetaStage>,
    pub warnings: Vec<String>,
}

impl AnnealOutcome {
    pub fn f_inf(&self) -> f64 {
        self.stacks.f_inf()
    }
}

pub(crate) fn objective(model: &ModelSpec, tables: &ValueTables) -> f64 {
    dot(model.weights(), &tables.vstar)
}

struct Point {
    params: ParameterVector,
    tables: ValueTables,
    policy: SoftPolicy,
    stacks: DerivativeStacks,
    objective: f64,
}

impl Point {
    fn at(
        model: &ModelSpec,
        params: ParameterVector,
        tables: ValueTables,
    ) -> Result<Self, SolverError> {
        let policy = gibbs_policy(&tables, model);
        let (_, stacks) = assemble_stacks(model, &params, &policy)?;
        let objective = objective(model, &tables);
        Ok(Point {
            params,
            tables,
            policy,
            stacks,
            objective,
        })
    }
}

/// Anneals the manipulable parameters from `params0` over `schedule`.
///
/// Failures of the inner descent (iteration cap, stalled line search) are
/// recorded as warnings; annealing continues with the best point found.
pub fn anneal(
    model: &ModelSpec,
    params0: &ParameterVector,
    schedule: &AnnealSchedule,
) -> Result<AnnealOutcome, SolverError> {
    schedule.validate()?;
    let sigma = schedule
        .perturbation
        .unwrap_or_else(|| 1e-3 * params0.state_extent());
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let betas = schedule.betas();
    let mut params = params0.clone();
    let mut lambda: Option<Vec<f64>> = None;
    let mut stages = Vec::with_capacity(betas.len());
    let mut warnings = Vec::new();
    let mut step = 1.0;
    let mut last: Option<(ModelSpec, Point)> = None;

    for (k, &beta) in betas.iter().enumerate() {
        let m = model.with_beta(beta);
        let start = solve_fixed_point(&m, &params, lambda.as_deref(), schedule.fixed_point())
            .or_else(|_| solve_fixed_point(&m, &params, None, schedule.fixed_point()));
        let tables = match start {
            Ok(fp) => fp.tables,
            Err(e) => {
                warnings.push(format!("beta {beta:.6}: skipped, {e}"));
                lambda = None;
                last = None;
                continue;
            }
        };
        let mut point = Point::at(&m, params.clone(), tables)?;
        let (iterations, converged) = descend(&m, &mut point, schedule, &mut step, &mut warnings);
        stages.push(BetaStage {
            beta,
            iterations,
            objective: point.objective,
            f_inf: point.stacks.f_inf(),
            converged,
        });
        if !converged {
            warnings.push(format!(
                "beta {beta:.6}: stopped after {iterations} iterations with |F|_inf = {:.3e}",
                point.stacks.f_inf()
            ));
        }
        params = point.params.clone();
        lambda = Some(point.tables.lambda.clone());
        if k + 1 < betas.len() && sigma > 0.0 && params.layout().n_manipulable() > 0 {
            let kick: Vec<f64> = (0..params.layout().n_manipulable())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect();
            params.add_manipulable(1.0, &kick);
        }
        last = Some((m, point));
    }

    match last {
        Some((m, p)) => Ok(AnnealOutcome {
            model: m,
            objective: p.objective,
            params: p.params,
            tables: p.tables,
            policy: p.policy,
            stacks: p.stacks,
            stages,
            warnings,
        }),
        None => Err(SolverError::InvalidSchedule(format!(
            "no temperature of the schedule admits a fixed point ({})",
            warnings.join("; ")
        ))),
    }
}

/// Gradient descent on the manipulable block at a fixed temperature.
/// Returns the iteration count and whether the gradient tolerance was met.
fn descend(
    model: &ModelSpec,
    point: &mut Point,
    schedule: &AnnealSchedule,
    step: &mut f64,
    warnings: &mut Vec<String>,
) -> (usize, bool) {
    if model.layout().n_manipulable() == 0 {
        return (0, true);
    }
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for it in 0..schedule.max_inner_iterations {
        let grad = point.stacks.f.clone();
        if norm_inf(&grad) <= schedule.gradient_tol {
            return (it, true);
        }
        let x = point.params.manipulable();
        if let Some((px, pg)) = &prev {
            let s: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                *step = (dot(&s, &s) / sy).clamp(1e-12, 1e6);
            } else {
                *step = (*step * 2.0).min(1e6);
            }
        }
        let g2 = dot(&grad, &grad);
        let noise = 1e-12 * point.objective.abs().max(1.0)
            + 10.0 * schedule.fixed_point_tol * model.n_states() as f64;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial = point.params.clone();
            trial.add_manipulable(-*step, &grad);
            let fp = solve_fixed_point(
                model,
                &trial,
                Some(&point.tables.lambda),
                schedule.fixed_point(),
            );
            if let Ok(fp) = fp {
                let obj = objective(model, &fp.tables);
                if obj <= point.objective - ARMIJO * *step * g2 + noise {
                    accepted = Some((trial, fp.tables));
                    break;
                }
            }
            *step *= 0.5;
        }
        let Some((trial, tables)) = accepted else {
            warnings.push(format!(
                "beta {:.6}: line search stalled at iteration {it}",
                model.beta()
            ));
            return (it, false);
        };
        match Point::at(model, trial, tables) {
            Ok(p) => {
                prev = Some((x, grad));
                *point = p;
            }
            Err(e) => {
                warnings.push(format!("beta {:.6}: {e}", model.beta()));
                return (it, false);
            }
        }
    }
    let done = point.stacks.f_inf() <= schedule.gradient_tol;
    (schedule.max_inner_iterations, done)
}
