//! Para-SDM data model.
//!
//! A [`ModelSpec`] is a finite state/action decision process with an
//! absorbing, cost-free terminal state, a sparse transition kernel, per-state
//! action masks and a cost `c(s, a, s'; Υ)` that depends on real parameters
//! attached to states (`ζ`) and actions (`η`). The parameters are split into a
//! prescribed block (given dynamics) and a manipulable block (designed
//! dynamics); [`ParamLayout`] fixes the flat coordinate order used everywhere
//! else in the crate.

mod cost;
pub mod io;
mod layout;

pub use cost::{ActionTargetCost, CostFunction, SquaredEuclideanCost, SumCost, TableCost};
pub use layout::{ParamCoord, ParamLayout, ParameterVector};

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Tolerance on kernel row sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model shape: {0}")]
    Shape(String),
    #[error("parameter vector has length {got}, layout expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("model failed validation: {0}")]
    Invalid(ValidationReport),
}

/// One positive-probability entry of a kernel row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: usize,
    pub prob: f64,
}

/// Finite para-SDM with terminal state, kernel, costs and parameter layout.
///
/// Value tables and policies are stored per allowed `(s, a)` pair; pairs are
/// numbered state-major, following the order of `allowed(s)`.
#[derive(Clone)]
pub struct ModelSpec {
    state_names: Vec<String>,
    action_names: Vec<String>,
    terminal: usize,
    allowed: Vec<Vec<usize>>,
    pair_offset: Vec<usize>,
    pair_action: Vec<usize>,
    transitions: Vec<Vec<Transition>>,
    gamma: f64,
    beta: f64,
    weights: Vec<f64>,
    cost: Arc<dyn CostFunction>,
    layout: Arc<ParamLayout>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("n_states", &self.n_states())
            .field("n_actions", &self.n_actions())
            .field("terminal", &self.terminal)
            .field("gamma", &self.gamma)
            .field("beta", &self.beta)
            .field("cost", &self.cost)
            .finish()
    }
}

impl ModelSpec {
    pub fn builder(n_states: usize, n_actions: usize, terminal: usize) -> ModelBuilder {
        ModelBuilder::new(n_states, n_actions, terminal)
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn terminal(&self) -> usize {
        self.terminal
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Weights `w(s)` of the aggregate objective `Σ_s w(s) V*(s)`. All ones
    /// unless the model was built with explicit weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cost(&self) -> &Arc<dyn CostFunction> {
        &self.cost
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn allowed(&self, state: usize) -> &[usize] {
        &self.allowed[state]
    }

    /// Total number of allowed `(s, a)` pairs.
    pub fn n_pairs(&self) -> usize {
        self.pair_action.len()
    }

    /// Pair indices belonging to `state`.
    pub fn pairs(&self, state: usize) -> std::ops::Range<usize> {
        self.pair_offset[state]..self.pair_offset[state + 1]
    }

    pub fn pair_action(&self, pair: usize) -> usize {
        self.pair_action[pair]
    }

    /// Pair index of `(state, action)`, or `None` if the action is masked.
    pub fn pair_index(&self, state: usize, action: usize) -> Option<usize> {
        self.allowed[state]
            .iter()
            .position(|&a| a == action)
            .map(|j| self.pair_offset[state] + j)
    }

    pub fn transitions(&self, pair: usize) -> &[Transition] {
        &self.transitions[pair]
    }

    /// Copy of the model at a different inverse temperature.
    pub fn with_beta(&self, beta: f64) -> ModelSpec {
        let mut m = self.clone();
        m.beta = beta;
        m
    }

    /// Copy of the model with different objective weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<ModelSpec, ModelError> {
        check_weights(&weights, self.n_states())?;
        let mut m = self.clone();
        m.weights = weights;
        Ok(m)
    }

    /// Copy of the model with a different cost function.
    pub fn with_cost(&self, cost: Arc<dyn CostFunction>) -> ModelSpec {
        let mut m = self.clone();
        m.cost = cost;
        m
    }

    /// Dense kernel `p[s][a][s']`; masked pairs are all-zero rows.
    pub fn dense_kernel(&self) -> Vec<Vec<Vec<f64>>> {
        let (n, m) = (self.n_states(), self.n_actions());
        let mut k = vec![vec![vec![0.0; n]; m]; n];
        for s in 0..n {
            for pair in self.pairs(s) {
                let a = self.pair_action[pair];
                for t in &self.transitions[pair] {
                    k[s][a][t.next] += t.prob;
                }
            }
        }
        k
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<(), ModelError> {
    if weights.len() != n {
        return Err(ModelError::Shape(format!(
            "expected {n} state weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(ModelError::Shape(
            "state weights must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Incremental constructor for [`ModelSpec`].
///
/// `build` checks shapes and ranges only; the semantic invariants (stochastic
/// rows, absorbing terminal, reachability) are checked by [`validate_model`].
pub struct ModelBuilder {
    n_states: usize,
    n_actions: usize,
    terminal: usize,
    state_names: Option<Vec<String>>,
    action_names: Option<Vec<String>>,
    kernel: Vec<Vec<Transition>>,
    masks: Option<Vec<Vec<usize>>>,
    gamma: f64,
    beta: f64,
    weights: Option<Vec<f64>>,
    cost: Option<Arc<dyn CostFunction>>,
    d_zeta: usize,
    d_eta: usize,
    manipulable_states: Vec<usize>,
    manipulable_actions: Vec<usize>,
    bad_pair: Option<(usize, usize)>,
}

impl ModelBuilder {
    fn new(n_states: usize, n_actions: usize, terminal: usize) -> Self {
        ModelBuilder {
            n_states,
            n_actions,
            terminal,
            state_names: None,
            action_names: None,
            kernel: vec![Vec::new(); n_states * n_actions],
            masks: None,
            gamma: 1.0,
            beta: 1.0,
            weights: None,
            cost: None,
            d_zeta: 0,
            d_eta: 0,
            manipulable_states: Vec::new(),
            manipulable_actions: Vec::new(),
            bad_pair: None,
        }
    }

    pub fn state_names(mut self, names: Vec<String>) -> Self {
        self.state_names = Some(names);
        self
    }

    pub fn action_names(mut self, names: Vec<String>) -> Self {
        self.action_names = Some(names);
        self
    }

    /// Adds `prob` to `p(next | state, action)`.
    pub fn transition(mut self, state: usize, action: usize, next: usize, prob: f64) -> Self {
        self.add_transition(state, action, next, prob);
        self
    }

    pub fn add_transition(&mut self, state: usize, action: usize, next: usize, prob: f64) {
        if state < self.n_states && action < self.n_actions {
            self.kernel[state * self.n_actions + action].push(Transition { next, prob });
        } else if self.bad_pair.is_none() {
            self.bad_pair = Some((state, action));
        }
    }

    pub fn deterministic(self, state: usize, action: usize, next: usize) -> Self {
        self.transition(state, action, next, 1.0)
    }

    /// Restricts the allowed actions of every state.
    pub fn masks(mut self, masks: Vec<Vec<usize>>) -> Self {
        self.masks = Some(masks);
        self
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn cost(mut self, cost: Arc<dyn CostFunction>) -> Self {
        self.cost = Some(cost);
        self
    }

    pub fn dims(mut self, d_zeta: usize, d_eta: usize) -> Self {
        self.d_zeta = d_zeta;
        self.d_eta = d_eta;
        self
    }

    pub fn manipulable_states(mut self, states: &[usize]) -> Self {
        self.manipulable_states = states.to_vec();
        self
    }

    pub fn manipulable_actions(mut self, actions: &[usize]) -> Self {
        self.manipulable_actions = actions.to_vec();
        self
    }

    pub fn build(self) -> Result<ModelSpec, ModelError> {
        let (n, m) = (self.n_states, self.n_actions);
        let shape = |msg: String| Err(ModelError::Shape(msg));
        if n == 0 || m == 0 {
            return shape("need at least one state and one action".into());
        }
        if self.terminal >= n {
            return shape(format!("terminal index {} out of range", self.terminal));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return shape(format!("discount must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return shape(format!(
                "inverse temperature must be positive, got {}",
                self.beta
            ));
        }
        if let Some((s, a)) = self.bad_pair {
            return shape(format!("transition from ({s}, {a}) is out of range"));
        }
        if self
            .kernel
            .iter()
            .flatten()
            .any(|t| t.next >= n || !t.prob.is_finite())
        {
            return shape("transition target out of range or non-finite probability".into());
        }
        let state_names = match self.state_names {
            Some(v) if v.len() != n => return shape(format!("expected {n} state names")),
            Some(v) => v,
            None => (0..n).map(|s| format!("s{s}")).collect(),
        };
        let action_names = match self.action_names {
            Some(v) if v.len() != m => return shape(format!("expected {m} action names")),
            Some(v) => v,
            None => (0..m).map(|a| format!("a{a}")).collect(),
        };
        let allowed = match self.masks {
            Some(masks) => {
                if masks.len() != n {
                    return shape(format!("expected {n} action masks, got {}", masks.len()));
                }
                let mut out = Vec::with_capacity(n);
                for (s, mut mask) in masks.into_iter().enumerate() {
                    mask.sort_unstable();
                    mask.dedup();
                    if mask.is_empty() {
                        return shape(format!("state {s} has no allowed action"));
                    }
                    if mask.iter().any(|&a| a >= m) {
                        return shape(format!("mask of state {s} names an unknown action"));
                    }
                    out.push(mask);
                }
                out
            }
            None => vec![(0..m).collect(); n],
        };
        let weights = self.weights.unwrap_or_else(|| vec![1.0; n]);
        check_weights(&weights, n)?;
        let cost = match self.cost {
            Some(c) => c,
            None => Arc::new(TableCost::zeros(n, m)),
        };

        let mut state_manip = vec![false; n];
        for &s in &self.manipulable_states {
            if s >= n {
                return shape(format!("manipulable state {s} out of range"));
            }
            state_manip[s] = true;
        }
        let mut action_manip = vec![false; m];
        for &a in &self.manipulable_actions {
            if a >= m {
                return shape(format!("manipulable action {a} out of range"));
            }
            action_manip[a] = true;
        }
        let layout = Arc::new(ParamLayout::new(
            self.d_zeta,
            self.d_eta,
            state_manip,
            action_manip,
        ));

        let mut pair_offset = Vec::with_capacity(n + 1);
        let mut pair_action = Vec::new();
        let mut transitions = Vec::new();
        let mut kernel = self.kernel;
        for (s, acts) in allowed.iter().enumerate() {
            pair_offset.push(pair_action.len());
            for &a in acts {
                let mut row = std::mem::take(&mut kernel[s * m + a]);
                row.sort_by_key(|t| t.next);
                // merge duplicates, drop exact zeros
                let mut merged: Vec<Transition> = Vec::with_capacity(row.len());
                for t in row {
                    match merged.last_mut() {
                        Some(last) if last.next == t.next => last.prob += t.prob,
                        _ => merged.push(t),
                    }
                }
                merged.retain(|t| t.prob != 0.0);
                pair_action.push(a);
                transitions.push(merged);
            }
        }
        pair_offset.push(pair_action.len());

        Ok(ModelSpec {
            state_names,
            action_names,
            terminal: self.terminal,
            allowed,
            pair_offset,
            pair_action,
            transitions,
            gamma: self.gamma,
            beta: self.beta,
            weights,
            cost,
            layout,
        })
    }
}

/// A violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ProbabilityOutOfRange {
        state: usize,
        action: usize,
        next: usize,
        prob: f64,
    },
    RowNotStochastic {
        state: usize,
        action: usize,
        sum: f64,
    },
    TerminalNotAbsorbing {
        action: usize,
    },
    TerminalCost {
        action: usize,
        next: usize,
        cost: f64,
    },
    NonFiniteCost {
        state: usize,
        action: usize,
        next: usize,
    },
    Unreachable {
        state: usize,
    },
    ParameterLayout {
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ProbabilityOutOfRange {
                state,
                action,
                next,
                prob,
            } => {
                write!(f, "p({next}|{state},{action}) = {prob} outside [0, 1]")
            }
            Violation::RowNotStochastic { state, action, sum } => {
                write!(f, "kernel row ({state},{action}) sums to {sum}")
            }
            Violation::TerminalNotAbsorbing { action } => {
                write!(f, "terminal state is not absorbing under action {action}")
            }
            Violation::TerminalCost { action, next, cost } => {
                write!(
                    f,
                    "terminal transition (a={action}, s'={next}) has cost {cost}"
                )
            }
            Violation::NonFiniteCost {
                state,
                action,
                next,
            } => {
                write!(f, "cost c({state},{action},{next}) is not finite")
            }
            Violation::Unreachable { state } => {
                write!(f, "terminal state unreachable from state {state}")
            }
            Violation::ParameterLayout { expected, got } => {
                write!(
                    f,
                    "parameter vector has {got} coordinates, model expects {expected}"
                )
            }
        }
    }
}

/// Outcome of [`validate_model`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<(), ModelError> {
        if self.passed() {
            Ok(())
        } else {
            Err(ModelError::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every model invariant at the given parameters.
///
/// Costs are evaluated at `params`, so terminal cost-freeness and finiteness
/// are certified for that point only.
pub fn validate_model(model: &ModelSpec, params: &ParameterVector) -> ValidationReport {
    let mut violations = Vec::new();
    let n = model.n_states();
    let delta = model.terminal();

    if params.layout().len() != model.layout().len() {
        violations.push(Violation::ParameterLayout {
            expected: model.layout().len(),
            got: params.layout().len(),
        });
        return ValidationReport { violations };
    }

    for s in 0..n {
        for pair in model.pairs(s) {
            let a = model.pair_action(pair);
            let row = model.transitions(pair);
            let mut sum = 0.0;
            for t in row {
                if !(0.0..=1.0).contains(&t.prob) {
                    violations.push(Violation::ProbabilityOutOfRange {
                        state: s,
                        action: a,
                        next: t.next,
                        prob: t.prob,
                    });
                }
                sum += t.prob;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                violations.push(Violation::RowNotStochastic {
                    state: s,
                    action: a,
                    sum,
                });
            }
            if s == delta {
                let absorbing = row.len() == 1 && row[0].next == delta;
                if !absorbing {
                    violations.push(Violation::TerminalNotAbsorbing { action: a });
                }
            }
            for t in row {
                let c = model.cost().cost(s, a, t.next, params);
                if !c.is_finite() {
                    violations.push(Violation::NonFiniteCost {
                        state: s,
                        action: a,
                        next: t.next,
                    });
                } else if s == delta && c != 0.0 {
                    violations.push(Violation::TerminalCost {
                        action: a,
                        next: t.next,
                        cost: c,
                    });
                }
            }
        }
    }

    // backward BFS from the terminal over positive-probability edges
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        for pair in model.pairs(s) {
            for t in model.transitions(pair) {
                if t.prob > 0.0 {
                    preds[t.next].push(s);
                }
            }
        }
    }
    let mut seen = vec![false; n];
    seen[delta] = true;
    let mut queue = VecDeque::from([delta]);
    while let Some(v) = queue.pop_front() {
        for &u in &preds[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    for (s, ok) in seen.iter().enumerate() {
        if !ok {
            violations.push(Violation::Unreachable { state: s });
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> ModelSpec {
        // s0 -> s1 -> s2 (terminal)
        ModelSpec::builder(3, 1, 2)
            .deterministic(0, 0, 1)
            .deterministic(1, 0, 2)
            .deterministic(2, 0, 2)
            .build()
            .unwrap()
    }

    #[test]
    fn chain_passes() {
        let m = chain();
        let p = ParameterVector::zeros(m.layout().clone());
        let r = validate_model(&m, &p);
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn self_loop_is_unreachable() {
        let m = ModelSpec::builder(2, 1, 1)
            .deterministic(0, 0, 0)
            .deterministic(1, 0, 1)
            .build()
            .unwrap();
        let p = ParameterVector::zeros(m.layout().clone());
        let r = validate_model(&m, &p);
        assert_eq!(r.violations, vec![Violation::Unreachable { state: 0 }]);
        assert!(r.into_result().is_err());
    }

    #[test]
    fn short_row_is_reported() {
        let m = ModelSpec::builder(2, 1, 1)
            .transition(0, 0, 1, 0.9)
            .deterministic(1, 0, 1)
            .build()
            .unwrap();
        let p = ParameterVector::zeros(m.layout().clone());
        let r = validate_model(&m, &p);
        assert_eq!(r.violations.len(), 1);
        match r.violations[0] {
            Violation::RowNotStochastic { state, action, sum } => {
                assert_eq!((state, action), (0, 0));
                assert!((sum - 0.9).abs() < 1e-15);
            }
            ref v => panic!("unexpected violation {v}"),
        }
    }

    #[test]
    fn terminal_must_be_absorbing_and_free() {
        let cost = TableCost::from_fn(2, 1, |s, _, _| if s == 1 { 1.0 } else { 0.0 });
        let m = ModelSpec::builder(2, 1, 1)
            .deterministic(0, 0, 1)
            .transition(1, 0, 1, 0.5)
            .transition(1, 0, 0, 0.5)
            .cost(Arc::new(cost))
            .build()
            .unwrap();
        let p = ParameterVector::zeros(m.layout().clone());
        let r = validate_model(&m, &p);
        assert!(r
            .violations
            .contains(&Violation::TerminalNotAbsorbing { action: 0 }));
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::TerminalCost { .. })));
    }

    #[test]
    fn masked_rows_are_not_checked() {
        // action 1 has no kernel entries but is masked everywhere
        let m = ModelSpec::builder(2, 2, 1)
            .deterministic(0, 0, 1)
            .deterministic(1, 0, 1)
            .masks(vec![vec![0], vec![0]])
            .build()
            .unwrap();
        let p = ParameterVector::zeros(m.layout().clone());
        assert!(validate_model(&m, &p).passed());
    }

    #[test]
    fn builder_rejects_bad_shapes() {
        assert!(ModelSpec::builder(2, 1, 2).build().is_err());
        assert!(ModelSpec::builder(2, 1, 1).gamma(0.0).build().is_err());
        assert!(ModelSpec::builder(2, 1, 1).beta(-1.0).build().is_err());
        assert!(ModelSpec::builder(2, 1, 1)
            .deterministic(0, 0, 5)
            .build()
            .is_err());
        assert!(ModelSpec::builder(2, 1, 1)
            .masks(vec![vec![], vec![0]])
            .build()
            .is_err());
        assert!(ModelSpec::builder(2, 1, 1)
            .weights(vec![1.0])
            .build()
            .is_err());
    }

    #[test]
    fn pair_indexing_follows_masks() {
        let m = ModelSpec::builder(2, 3, 1)
            .masks(vec![vec![2, 0], vec![1]])
            .build()
            .unwrap();
        assert_eq!(m.n_pairs(), 3);
        assert_eq!(m.pair_index(0, 0), Some(0));
        assert_eq!(m.pair_index(0, 2), Some(1));
        assert_eq!(m.pair_index(0, 1), None);
        assert_eq!(m.pair_index(1, 1), Some(2));
        assert_eq!(m.pairs(1), 2..3);
    }
}
