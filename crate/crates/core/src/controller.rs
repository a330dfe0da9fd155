//! Control-Lyapunov tracking of the manipulable parameters.
//!
//! The candidate is `𝒱(Υ) = Σ_s w(s) V*(s)`. Along the flow
//! `Υ̇ = (κ, u)` its derivative is `α + Fᵀu` with drift `α = Gᵀκ`, and the
//! feedback law
//!
//! ```text
//! u(F) = −[K0 + (α + √(α² + (FᵀF)²)) / FᵀF]·F,    u(0) = 0
//! ```
//!
//! makes it `−K0·FᵀF − √(α² + (FᵀF)²) ≤ 0`. Time is advanced by explicit
//! Euler; after each step the value tables are refreshed either by a
//! warm-started fixed-point solve or by a first-order Taylor update.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelSpec, ParameterVector};
use crate::numeric::{dot, norm2};
use crate::sensitivity::{assemble_stacks, DerivativeStacks, GradientTable};
use crate::soft_solver::{
    free_energy, gibbs_policy, lambda_from_values, solve_fixed_point, FixedPointOptions,
    SoftPolicy, SolverError, ValueTables,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid control configuration: {0}")]
    Config(String),
    #[error("prescribed velocity has {got} entries, layout expects {expected}")]
    VelocityShape { expected: usize, got: usize },
    #[error("solver failed at t = {t}: {source}")]
    Solver {
        t: f64,
        #[source]
        source: SolverError,
    },
    #[error("Lyapunov value became non-finite at t = {t}")]
    NonFinite { t: f64 },
}

/// How the value tables are refreshed after a parameter step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefreshMode {
    /// Fixed-point solve warm-started from the previous `Λ`.
    #[default]
    Exact,
    /// `V ← V + Σ_θ g_θ δΥ_θ`, then one Bellman evaluation at the new `Υ`.
    Taylor,
}

impl fmt::Display for RefreshMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefreshMode::Exact => "exact",
            RefreshMode::Taylor => "taylor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub k0: f64,
    pub dt: f64,
    /// `u = 0` whenever `FᵀF` is at or below this.
    pub zero_threshold: f64,
    pub mode: RefreshMode,
    /// Cap on `‖u‖₂`; infinite means the law is applied unmodified.
    #[serde(with = "optional_infinity")]
    pub gain_cap: f64,
    /// Tolerance of the exact-mode re-solve.
    pub fixed_point_tol: f64,
    pub max_fixed_point_iter: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            k0: 1.0,
            dt: 0.01,
            zero_threshold: 1e-9,
            mode: RefreshMode::Exact,
            gain_cap: f64::INFINITY,
            fixed_point_tol: 1e-12,
            max_fixed_point_iter: crate::soft_solver::DEFAULT_MAX_ITER,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::Config(m.to_string()));
        if !(self.k0 > 0.0 && self.k0.is_finite()) {
            return bad("k0 must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.zero_threshold >= 0.0) {
            return bad("zero_threshold must be non-negative");
        }
        if !(self.gain_cap > 0.0) {
            return bad("gain_cap must be positive");
        }
        if !(self.fixed_point_tol > 0.0) {
            return bad("fixed_point_tol must be positive");
        }
        Ok(())
    }

    fn fixed_point(&self) -> FixedPointOptions {
        FixedPointOptions {
            tol: self.fixed_point_tol,
            max_iter: self.max_fixed_point_iter,
        }
    }
}

/// JSON has no infinity; `null` stands for an unbounded cap.
mod optional_infinity {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Velocities `κ = (φ₁, ψ₁)` of the prescribed block.
pub trait PrescribedDynamics: Send + Sync + fmt::Debug {
    /// Velocity of every prescribed coordinate, in flat-layout order.
    fn velocity(&self, params: &ParameterVector, t: f64) -> Vec<f64>;
}

/// `κ ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticDynamics;

impl PrescribedDynamics for StaticDynamics {
    fn velocity(&self, params: &ParameterVector, _: f64) -> Vec<f64> {
        vec![0.0; params.layout().n_prescribed()]
    }
}

/// Everything carried from one step to the next.
#[derive(Debug, Clone)]
pub struct ControlState {
    pub t: f64,
    pub params: ParameterVector,
    pub tables: ValueTables,
    pub policy: SoftPolicy,
    /// Gradients and stacks used for the last control.
    pub gradients: GradientTable,
    pub stacks: DerivativeStacks,
    pub lyapunov: f64,
    pub alpha: f64,
    pub kappa: Vec<f64>,
    pub u: Vec<f64>,
}

impl ControlState {
    /// Solves the tables at `params` (warm-started from `lambda0` if given)
    /// and evaluates the stacks under the Gibbs policy.
    pub fn initialize(
        model: &ModelSpec,
        params: ParameterVector,
        lambda0: Option<&[f64]>,
        dynamics: &dyn PrescribedDynamics,
        t: f64,
        cfg: &ControlConfig,
    ) -> Result<Self, ControlError> {
        cfg.validate()?;
        let solver = |source| ControlError::Solver { t, source };
        let fp = solve_fixed_point(model, &params, lambda0, cfg.fixed_point()).map_err(solver)?;
        let policy = gibbs_policy(&fp.tables, model);
        let (gradients, stacks) = assemble_stacks(model, &params, &policy).map_err(solver)?;
        let kappa = velocity(dynamics, &params, t)?;
        let alpha = dot(&stacks.g, &kappa);
        Ok(ControlState {
            t,
            lyapunov: lyapunov_value(model, &fp.tables),
            u: vec![0.0; params.layout().n_manipulable()],
            params,
            tables: fp.tables,
            policy,
            gradients,
            stacks,
            alpha,
            kappa,
        })
    }
}

fn velocity(
    dynamics: &dyn PrescribedDynamics,
    params: &ParameterVector,
    t: f64,
) -> Result<Vec<f64>, ControlError> {
    let kappa = dynamics.velocity(params, t);
    let expected = params.layout().n_prescribed();
    if kappa.len() != expected {
        return Err(ControlError::VelocityShape {
            expected,
            got: kappa.len(),
        });
    }
    Ok(kappa)
}

/// `𝒱 = Σ_s w(s) V*(s)`; the terminal state contributes zero.
pub fn lyapunov_value(model: &ModelSpec, tables: &ValueTables) -> f64 {
    dot(model.weights(), &tables.vstar)
}

/// The feedback law `u(F)` for drift `α = Gᵀκ`, clipped to the gain cap.
pub fn control_law(f: &[f64], alpha: f64, cfg: &ControlConfig) -> Vec<f64> {
    let q = dot(f, f);
    if q <= cfg.zero_threshold || q == 0.0 {
        return vec![0.0; f.len()];
    }
    let coeff = cfg.k0 + (alpha + alpha.hypot(q)) / q;
    let mut u: Vec<f64> = f.iter().map(|x| -coeff * x).collect();
    if cfg.gain_cap.is_finite() {
        let n = norm2(&u);
        if n > cfg.gain_cap {
            let scale = cfg.gain_cap / n;
            u.iter_mut().for_each(|x| *x *= scale);
        }
    }
    u
}

/// First-order update `V*(s) + Σ_θ g_θ(s)·δΥ_θ` for every state.
pub fn taylor_update(vstar: &[f64], gradients: &GradientTable, delta: &[f64]) -> Vec<f64> {
    let d = gradients.directional(delta);
    vstar.iter().zip(&d).map(|(v, g)| v + g).collect()
}

/// Refreshes the tables after the step `δΥ` by the Taylor expansion of `V*`
/// followed by one evaluation of `Λ` at the new parameters.
pub fn taylor_tables(
    model: &ModelSpec,
    params: &ParameterVector,
    vstar: &[f64],
    gradients: &GradientTable,
    delta: &[f64],
) -> Result<ValueTables, SolverError> {
    let v = taylor_update(vstar, gradients, delta);
    let lambda = lambda_from_values(model, params, &v)?;
    Ok(ValueTables {
        vstar: free_energy(&lambda, model),
        lambda,
    })
}

/// Advances the state by one explicit Euler step of length `cfg.dt`.
pub fn step(
    state: &ControlState,
    model: &ModelSpec,
    dynamics: &dyn PrescribedDynamics,
    cfg: &ControlConfig,
) -> Result<ControlState, ControlError> {
    step_with(state, model, dynamics, cfg, control_law)
}

/// [`step`] with a substitute control law.
pub fn step_with(
    state: &ControlState,
    model: &ModelSpec,
    dynamics: &dyn PrescribedDynamics,
    cfg: &ControlConfig,
    law: impl Fn(&[f64], f64, &ControlConfig) -> Vec<f64>,
) -> Result<ControlState, ControlError> {
    let t = state.t;
    let t_next = t + cfg.dt;
    let solver = |source| ControlError::Solver { t: t_next, source };

    let kappa = velocity(dynamics, &state.params, t)?;
    let mut params = state.params.clone();
    params.add_prescribed(cfg.dt, &kappa);

    let (gradients, stacks) = assemble_stacks(model, &params, &state.policy).map_err(solver)?;
    let alpha = dot(&stacks.g, &kappa);
    let u = law(&stacks.f, alpha, cfg);
    params.add_manipulable(cfg.dt, &u);

    let tables = match cfg.mode {
        RefreshMode::Exact => {
            solve_fixed_point(
                model,
                &params,
                Some(&state.tables.lambda),
                cfg.fixed_point(),
            )
            .map_err(solver)?
            .tables
        }
        RefreshMode::Taylor => {
            let old = state.params.flatten();
            let delta: Vec<f64> = params
                .flatten()
                .iter()
                .zip(&old)
                .map(|(a, b)| a - b)
                .collect();
            taylor_tables(model, &params, &state.tables.vstar, &gradients, &delta)
                .map_err(solver)?
        }
    };
    let lyapunov = lyapunov_value(model, &tables);
    if !lyapunov.is_finite() {
        return Err(ControlError::NonFinite { t: t_next });
    }
    Ok(ControlState {
        t: t_next,
        params,
        policy: gibbs_policy(&tables, model),
        tables,
        gradients,
        stacks,
        lyapunov,
        alpha,
        kappa,
        u,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::model::SquaredEuclideanCost;

    fn cfg(k0: f64) -> ControlConfig {
        ControlConfig {
            k0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_gradient_gives_zero_control() {
        assert_eq!(control_law(&[0.0, 0.0], 3.0, &cfg(1.0)), vec![0.0, 0.0]);
        let tiny = ControlConfig {
            zero_threshold: 1e-9,
            ..cfg(1.0)
        };
        assert_eq!(control_law(&[1e-5, 0.0], 3.0, &tiny), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_drift_gives_k0_plus_one() {
        let u = control_law(&[0.5, -2.0, 1.0], 0.0, &cfg(2.5));
        assert_eq!(u, vec![-1.75, 7.0, -3.5]);
    }

    #[test]
    fn negative_drift_closed_form() {
        let u = control_law(&[1.0, 0.0], -1.0, &cfg(1.0));
        assert!((u[0] + std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(u[1], 0.0);
    }

    #[test]
    fn gain_cap_clips_the_norm() {
        let c = ControlConfig {
            gain_cap: 1.0,
            ..cfg(1.0)
        };
        let u = control_law(&[3.0, 4.0], 0.0, &c);
        assert!((norm2(&u) - 1.0).abs() < 1e-15);
        assert!(u[0] < 0.0 && u[1] < 0.0);
    }

    #[test]
    fn lyapunov_sums_the_free_energy() {
        let m = ModelSpec::builder(3, 1, 2)
            .deterministic(0, 0, 1)
            .deterministic(1, 0, 2)
            .deterministic(2, 0, 2)
            .build()
            .unwrap();
        let tables = ValueTables {
            lambda: vec![0.0; 3],
            vstar: vec![0.0; 3],
        };
        assert_eq!(lyapunov_value(&m, &tables), 0.0);
        let tables = ValueTables {
            lambda: vec![2.0, 3.0, 0.0],
            vstar: vec![2.0, 3.0, 0.0],
        };
        assert_eq!(lyapunov_value(&m, &tables), 5.0);
    }

    #[test]
    fn config_round_trips_through_json_with_infinite_cap() {
        let c = ControlConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"gain_cap\":null"));
        let back: ControlConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(ControlConfig { dt: 0.0, ..c }.validate().is_err());
    }

    /// `s0 → s1 → δ` with `s1` manipulable; the optimum puts `ζ₁` midway.
    fn two_hop() -> (ModelSpec, ParameterVector) {
        let m = ModelSpec::builder(3, 1, 2)
            .deterministic(0, 0, 1)
            .deterministic(1, 0, 2)
            .deterministic(2, 0, 2)
            .cost(Arc::new(SquaredEuclideanCost::default()))
            .dims(1, 0)
            .manipulable_states(&[1])
            .weights(vec![1.0, 0.0, 0.0])
            .build()
            .unwrap();
        let p = ParameterVector::from_blocks(
            m.layout().clone(),
            &[vec![4.0], vec![3.5], vec![0.0]],
            &[vec![]],
        )
        .unwrap();
        (m, p)
    }

    #[test]
    fn static_run_descends_like_gradient_flow() {
        let (m, p) = two_hop();
        let c = ControlConfig {
            dt: 0.05,
            zero_threshold: 0.0,
            ..cfg(1.0)
        };
        let mut st =
            ControlState::initialize(&m, p.clone(), None, &StaticDynamics, 0.0, &c).unwrap();
        // oracle: explicit gradient descent on 𝒱(y) = (4 − y)² + y² with step 2·dt
        let mut y = 3.5;
        for _ in 0..200 {
            let prev = st.lyapunov;
            st = step(&st, &m, &StaticDynamics, &c).unwrap();
            y -= 2.0 * c.dt * (4.0 * y - 8.0);
            assert!((st.params.zeta(1)[0] - y).abs() < 1e-9);
            assert!(st.lyapunov <= prev + 1e-12);
        }
        assert!((st.params.zeta(1)[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn stationary_start_stays_put() {
        let (m, mut p) = two_hop();
        p.zeta_mut(1)[0] = 2.0;
        let c = cfg(1.0);
        let st = ControlState::initialize(&m, p.clone(), None, &StaticDynamics, 0.0, &c).unwrap();
        let next = step(&st, &m, &StaticDynamics, &c).unwrap();
        assert_eq!(next.params, p);
        assert_eq!(next.lyapunov, st.lyapunov);
    }

    #[test]
    fn taylor_with_zero_step_is_identity() {
        let (m, p) = two_hop();
        let c = cfg(1.0);
        let st = ControlState::initialize(&m, p.clone(), None, &StaticDynamics, 0.0, &c).unwrap();
        let zero = vec![0.0; p.layout().len()];
        let t = taylor_tables(&m, &p, &st.tables.vstar, &st.gradients, &zero).unwrap();
        assert!(crate::numeric::max_abs_diff(&t.vstar, &st.tables.vstar) < 1e-12);
        assert_eq!(
            taylor_update(&st.tables.vstar, &st.gradients, &zero),
            st.tables.vstar
        );
    }

    #[test]
    fn taylor_first_order_term_is_the_directional_derivative() {
        // single hop with c = w·(ζ_s − ζ_δ)² is linear in w; use a shift of ζ_s
        let m = ModelSpec::builder(2, 1, 1)
            .deterministic(0, 0, 1)
            .deterministic(1, 0, 1)
            .cost(Arc::new(SquaredEuclideanCost::default()))
            .dims(1, 0)
            .manipulable_states(&[0])
            .build()
            .unwrap();
        let p =
            ParameterVector::from_blocks(m.layout().clone(), &[vec![1.5], vec![0.0]], &[vec![]])
                .unwrap();
        let c = cfg(1.0);
        let st = ControlState::initialize(&m, p.clone(), None, &StaticDynamics, 0.0, &c).unwrap();
        let dir = vec![0.0, 1.0];
        let h = 1e-6;
        let v = |x: f64| {
            let mut q = p.clone();
            q.zeta_mut(0)[0] = x;
            solve_fixed_point(&m, &q, None, FixedPointOptions::default())
                .unwrap()
                .tables
                .vstar[0]
        };
        let fd = (v(1.5 + h) - v(1.5 - h)) / (2.0 * h);
        let first = st.gradients.directional(&dir)[0];
        assert!((first - fd).abs() < 1e-6, "{first} vs {fd}");
    }

    proptest! {
        #[test]
        fn derivative_identity_holds(
            f in prop::collection::vec(-10.0f64..10.0, 1..6),
            alpha in -50.0f64..50.0,
            k0 in 0.01f64..10.0,
        ) {
            let c = ControlConfig { k0, zero_threshold: 0.0, ..Default::default() };
            let q = dot(&f, &f);
            prop_assume!(q > 1e-6);
            let u = control_law(&f, alpha, &c);
            let lhs = alpha + dot(&f, &u);
            let rhs = -k0 * q - alpha.hypot(q);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            prop_assert!(rhs <= 0.0);
        }

        #[test]
        fn lipschitz_bound_for_non_positive_drift(
            f in prop::collection::vec(-10.0f64..10.0, 1..6),
            alpha in -50.0f64..=0.0,
            k0 in 0.01f64..10.0,
        ) {
            let c = ControlConfig { k0, zero_threshold: 0.0, ..Default::default() };
            let u = control_law(&f, alpha, &c);
            prop_assert!(norm2(&u) <= (1.0 + k0) * norm2(&f) * (1.0 + 1e-14));
        }
    }
}
