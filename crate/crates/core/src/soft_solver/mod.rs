//! Entropy-regularized value tables for fixed parameters.
//!
//! For inverse temperature `β` and discount `γ`, write `T = γ/β`. The
//! state-action value `Λ` is the fixed point of the soft Bellman map
//!
//! ```text
//! [TΛ](s,a) = Σ_{s'} p(s'|s,a)·(c(s,a,s') + T·log p(s'|s,a))
//!           + γ·Σ_{s'} p(s'|s,a)·V(s'),     V(s') = −T·log Σ_{a'} exp(−Λ(s',a')/T)
//! ```
//!
//! with `V(δ) = 0` and `Λ(δ, ·) = 0` at the terminal state. The free energy
//! `V*` is the soft minimum of `Λ` and the optimal policy is the Gibbs
//! distribution `μ(a|s) ∝ exp(−Λ(s,a)/T)`.

mod anneal;
mod policy_system;

pub use anneal::{anneal, AnnealOutcome, AnnealSchedule, BetaStage};
pub(crate) use policy_system::PolicySystem;

use thiserror::Error;

use crate::model::{ModelSpec, ParameterVector};
use crate::numeric::{norm_inf, softmin};

/// Default fixed-point tolerance on `‖TΛ − Λ‖_∞`.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default cap on fixed-point sweeps.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Number of consecutive residual increases treated as divergence.
const DIVERGENCE_WINDOW: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("cost c({state},{action},{next}) is not finite")]
    NonFiniteCost {
        state: usize,
        action: usize,
        next: usize,
    },
    #[error("fixed point not reached after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("fixed-point iteration diverged after {iterations} sweeps (residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },
    #[error("policy evaluation system is singular (policy is not proper)")]
    Singular,
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("table has {got} entries, model expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("invalid annealing schedule: {0}")]
    InvalidSchedule(String),
}

/// State-action values `Λ` (per allowed pair) and free energy `V*` (per state).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub lambda: Vec<f64>,
    pub vstar: Vec<f64>,
}

impl ValueTables {
    /// Tables whose free energy is derived from `lambda`.
    pub fn from_lambda(model: &ModelSpec, lambda: Vec<f64>) -> Self {
        let vstar = free_energy(&lambda, model);
        ValueTables { lambda, vstar }
    }

    pub fn lambda_at(&self, model: &ModelSpec, state: usize, action: usize) -> Option<f64> {
        model.pair_index(state, action).map(|p| self.lambda[p])
    }
}

/// Row-stochastic policy `μ(a|s)` over allowed pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPolicy {
    probs: Vec<f64>,
}

impl SoftPolicy {
    /// Wraps per-pair probabilities after checking normalization and strict
    /// positivity.
    pub fn from_probs(model: &ModelSpec, probs: Vec<f64>) -> Result<Self, SolverError> {
        if probs.len() != model.n_pairs() {
            return Err(SolverError::Shape {
                expected: model.n_pairs(),
                got: probs.len(),
            });
        }
        for s in 0..model.n_states() {
            let row = &probs[model.pairs(s)];
            if row.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
                return Err(SolverError::InvalidPolicy(format!(
                    "row {s} has an entry outside (0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(SolverError::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(SoftPolicy { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row<'a>(&'a self, model: &ModelSpec, state: usize) -> &'a [f64] {
        &self.probs[model.pairs(state)]
    }

    /// `μ(a|s)`, zero for masked actions.
    pub fn prob(&self, model: &ModelSpec, state: usize, action: usize) -> f64 {
        model
            .pair_index(state, action)
            .map_or(0.0, |p| self.probs[p])
    }

    /// Most probable action at `state` (lowest action index on ties).
    pub fn argmax(&self, model: &ModelSpec, state: usize) -> usize {
        let mut best = model.pairs(state).start;
        for pair in model.pairs(state) {
            if self.probs[pair] > self.probs[best] {
                best = pair;
            }
        }
        model.pair_action(best)
    }
}

/// Costs of every positive-probability transition, aligned with
/// [`ModelSpec::transitions`]. Terminal rows are zero by convention.
pub(crate) fn evaluate_costs(
    model: &ModelSpec,
    params: &ParameterVector,
) -> Result<Vec<Vec<f64>>, SolverError> {
    let mut out = Vec::with_capacity(model.n_pairs());
    for s in 0..model.n_states() {
        for pair in model.pairs(s) {
            let a = model.pair_action(pair);
            let row = model
                .transitions(pair)
                .iter()
                .map(|t| {
                    if s == model.terminal() {
                        return Ok(0.0);
                    }
                    let c = model.cost().cost(s, a, t.next, params);
                    if c.is_finite() {
                        Ok(c)
                    } else {
                        Err(SolverError::NonFiniteCost {
                            state: s,
                            action: a,
                            next: t.next,
                        })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(row);
        }
    }
    Ok(out)
}

/// Soft Bellman map with the parameter-dependent part precomputed.
pub(crate) struct BellmanMap<'m> {
    model: &'m ModelSpec,
    /// `Σ_{s'} p·(c + T·log p)` per pair.
    base: Vec<f64>,
}

impl<'m> BellmanMap<'m> {
    pub(crate) fn new(model: &'m ModelSpec, params: &ParameterVector) -> Result<Self, SolverError> {
        let costs = evaluate_costs(model, params)?;
        let temp = model.gamma() / model.beta();
        let mut base = vec![0.0; model.n_pairs()];
        for s in 0..model.n_states() {
            if s == model.terminal() {
                continue;
            }
            for pair in model.pairs(s) {
                base[pair] = model
                    .transitions(pair)
                    .iter()
                    .zip(&costs[pair])
                    .map(|(t, c)| t.prob * (c + temp * t.prob.ln()))
                    .sum();
            }
        }
        Ok(BellmanMap { model, base })
    }

    /// `Λ(s,a) = base(s,a) + γ Σ p V(s')` for a given state value vector.
    pub(crate) fn lambda_from_values(&self, values: &[f64], out: &mut [f64]) {
        let m = self.model;
        let gamma = m.gamma();
        for s in 0..m.n_states() {
            for pair in m.pairs(s) {
                out[pair] = if s == m.terminal() {
                    0.0
                } else {
                    let future: f64 = m
                        .transitions(pair)
                        .iter()
                        .map(|t| t.prob * values[t.next])
                        .sum();
                    self.base[pair] + gamma * future
                };
            }
        }
    }

    pub(crate) fn apply(&self, lambda: &[f64], out: &mut [f64]) {
        let v = free_energy(lambda, self.model);
        self.lambda_from_values(&v, out);
    }
}

fn check_lambda(model: &ModelSpec, lambda: &[f64]) -> Result<(), SolverError> {
    if lambda.len() != model.n_pairs() {
        return Err(SolverError::Shape {
            expected: model.n_pairs(),
            got: lambda.len(),
        });
    }
    Ok(())
}

/// One application of the soft Bellman map, `Λ ↦ TΛ`.
pub fn soft_bellman_operator(
    lambda: &[f64],
    model: &ModelSpec,
    params: &ParameterVector,
) -> Result<Vec<f64>, SolverError> {
    check_lambda(model, lambda)?;
    let map = BellmanMap::new(model, params)?;
    let mut out = vec![0.0; lambda.len()];
    map.apply(lambda, &mut out);
    Ok(out)
}

/// `Λ(s,a) = Σ p·(c + T log p + γ V(s'))` for an arbitrary value vector `V`.
pub fn lambda_from_values(
    model: &ModelSpec,
    params: &ParameterVector,
    values: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let map = BellmanMap::new(model, params)?;
    let mut out = vec![0.0; model.n_pairs()];
    map.lambda_from_values(values, &mut out);
    Ok(out)
}

/// Free energy `V*(s) = −T·log Σ_a exp(−Λ(s,a)/T)`, zero at the terminal state.
pub fn free_energy(lambda: &[f64], model: &ModelSpec) -> Vec<f64> {
    let temp = model.gamma() / model.beta();
    (0..model.n_states())
        .map(|s| {
            if s == model.terminal() {
                0.0
            } else {
                softmin(lambda[model.pairs(s)].iter().copied(), temp)
            }
        })
        .collect()
}

/// Gibbs policy `μ(a|s) ∝ exp(−Λ(s,a)/T)`; uniform at the terminal state.
///
/// Entries that would underflow are raised to the smallest positive normal
/// double, which keeps every row strictly positive.
pub fn gibbs_policy(tables: &ValueTables, model: &ModelSpec) -> SoftPolicy {
    let temp = model.gamma() / model.beta();
    let mut probs = vec![0.0; model.n_pairs()];
    for s in 0..model.n_states() {
        let pairs = model.pairs(s);
        if s == model.terminal() {
            let u = 1.0 / pairs.len() as f64;
            probs[pairs].iter_mut().for_each(|p| *p = u);
            continue;
        }
        let row = &tables.lambda[pairs.clone()];
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let mut z = 0.0;
        for (p, &l) in probs[pairs.clone()].iter_mut().zip(row) {
            // floored so that no allowed action underflows to probability zero
            *p = (-(l - lo) / temp).exp().max(f64::MIN_POSITIVE);
            z += *p;
        }
        probs[pairs].iter_mut().for_each(|p| *p /= z);
    }
    SoftPolicy { probs }
}

/// Options for [`solve_fixed_point`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub tables: ValueTables,
    /// Number of sweeps that changed `Λ` by more than the tolerance.
    pub iterations: usize,
    /// `‖TΛ − Λ‖_∞` for the last sweep.
    pub residual: f64,
}

/// Iterates the soft Bellman map from `lambda0` (zeros if `None`) until
/// `‖TΛ − Λ‖_∞ ≤ tol`. For `γ < 1` the sweep continues until the a-posteriori
/// bound `γ/(1−γ)·‖TΛ − Λ‖_∞` on the distance to the fixed point is also
/// below `tol`.
pub fn solve_fixed_point(
    model: &ModelSpec,
    params: &ParameterVector,
    lambda0: Option<&[f64]>,
    opts: FixedPointOptions,
) -> Result<FixedPoint, SolverError> {
    assert!(opts.tol > 0.0, "fixed-point tolerance must be positive");
    let map = BellmanMap::new(model, params)?;
    let mut lambda = match lambda0 {
        Some(l) => {
            check_lambda(model, l)?;
            l.to_vec()
        }
        None => vec![0.0; model.n_pairs()],
    };
    let gamma = model.gamma();
    let stop = if gamma < 1.0 {
        opts.tol.min(opts.tol * (1.0 - gamma) / gamma)
    } else {
        opts.tol
    };
    let mut next = vec![0.0; lambda.len()];
    let mut residual = f64::INFINITY;
    let mut rising = 0;
    for k in 0..=opts.max_iter {
        map.apply(&lambda, &mut next);
        let r = next
            .iter()
            .zip(&lambda)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !r.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::Diverged {
                iterations: k,
                residual: r,
            });
        }
        rising = if r > residual { rising + 1 } else { 0 };
        residual = r;
        std::mem::swap(&mut lambda, &mut next);
        if residual <= stop {
            return Ok(FixedPoint {
                tables: ValueTables::from_lambda(model, lambda),
                iterations: k,
                residual,
            });
        }
        if rising >= DIVERGENCE_WINDOW {
            return Err(SolverError::Diverged {
                iterations: k,
                residual,
            });
        }
    }
    Err(SolverError::NotConverged {
        iterations: opts.max_iter,
        residual,
    })
}

/// Value of an arbitrary proper policy under the entropy-regularized cost,
///
/// `V^μ(s) = Σ_{a,s'} μ(a|s) p(s'|s,a)·(c + T log p + T log μ(a|s) + γ V^μ(s'))`,
///
/// solved as `(I − γ P_μ) V = b` over the non-terminal states.
pub fn soft_policy_value(
    model: &ModelSpec,
    params: &ParameterVector,
    policy: &SoftPolicy,
    tol: f64,
) -> Result<Vec<f64>, SolverError> {
    let costs = evaluate_costs(model, params)?;
    let temp = model.gamma() / model.beta();
    let mut rhs = vec![0.0; model.n_states()];
    for s in 0..model.n_states() {
        if s == model.terminal() {
            continue;
        }
        for pair in model.pairs(s) {
            let mu = policy.probs[pair];
            let hop: f64 = model
                .transitions(pair)
                .iter()
                .zip(&costs[pair])
                .map(|(t, c)| t.prob * (c + temp * t.prob.ln() + temp * mu.ln()))
                .sum();
            rhs[s] += mu * hop;
        }
    }
    let system = PolicySystem::new(model, policy, tol)?;
    system.solve(&rhs)
}

/// Residual `‖TΛ − Λ‖_∞` of a table at the given parameters.
pub fn bellman_residual(
    model: &ModelSpec,
    params: &ParameterVector,
    lambda: &[f64],
) -> Result<f64, SolverError> {
    let t = soft_bellman_operator(lambda, model, params)?;
    let diff: Vec<f64> = t.iter().zip(lambda).map(|(a, b)| a - b).collect();
    Ok(norm_inf(&diff))
}
