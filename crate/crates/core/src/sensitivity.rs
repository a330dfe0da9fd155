//! Derivatives of the free energy with respect to parameter coordinates.
//!
//! At the Gibbs policy `μ` of the current tables, each partial derivative
//! `g_θ(s) = ∂V*(s)/∂θ` satisfies the linear recursion
//!
//! ```text
//! g_θ(s) = Σ_{a,s'} μ(a|s) p(s'|s,a)·(∂c(s,a,s')/∂θ + γ g_θ(s')),   g_θ(δ) = 0,
//! ```
//!
//! i.e. `(I − γ P_μ) g_θ = b_θ`. The recursion has no `∂μ/∂θ` term, which is
//! only correct when `μ` is the Gibbs policy of the tables at the same
//! parameters; callers must supply that policy. One factorization of
//! `I − γ P_μ` serves every coordinate.

use nalgebra::DMatrix;

use crate::model::{ModelSpec, ParamCoord, ParameterVector};
use crate::numeric::{norm2, norm_inf};
use crate::soft_solver::{PolicySystem, SoftPolicy, SolverError};

/// `∂V*(s)/∂θ` for every flat coordinate `θ` and state `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    n_states: usize,
    /// Coordinate-major: `values[θ * n_states + s]`.
    values: Vec<f64>,
}

impl GradientTable {
    pub fn n_coords(&self) -> usize {
        self.values.len() / self.n_states.max(1)
    }

    /// Gradient vector `g_θ` over states for flat coordinate `flat`.
    pub fn coord(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.n_states..(flat + 1) * self.n_states]
    }

    pub fn get(&self, flat: usize, state: usize) -> f64 {
        self.values[flat * self.n_states + state]
    }

    /// Directional derivative `Σ_θ g_θ(s)·d_θ` for every state.
    pub fn directional(&self, direction: &[f64]) -> Vec<f64> {
        assert_eq!(direction.len(), self.n_coords());
        let mut out = vec![0.0; self.n_states];
        for (flat, d) in direction.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            for (o, g) in out.iter_mut().zip(self.coord(flat)) {
                *o += g * d;
            }
        }
        out
    }
}

/// Weighted sums `Σ_s w(s) g_θ(s)` split into the prescribed stack `G` and the
/// manipulable stack `F`, each in flat-layout order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DerivativeStacks {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl DerivativeStacks {
    pub fn f_norm(&self) -> f64 {
        norm2(&self.f)
    }

    pub fn f_inf(&self) -> f64 {
        norm_inf(&self.f)
    }

    /// Full gradient `∂𝒱/∂Υ` in flat-layout order.
    pub fn full(&self) -> Vec<f64> {
        let mut v = self.g.clone();
        v.extend_from_slice(&self.f);
        v
    }
}

fn gradient_matrix(
    model: &ModelSpec,
    params: &ParameterVector,
    policy: &SoftPolicy,
    tol: f64,
    coords: &[usize],
) -> Result<(PolicySystem, DMatrix<f64>), SolverError> {
    let layout = model.layout();
    let system = PolicySystem::new(model, policy, tol)?;
    let mut column_of = vec![usize::MAX; layout.len()];
    for (j, &flat) in coords.iter().enumerate() {
        column_of[flat] = j;
    }
    let mut b = DMatrix::<f64>::zeros(system.dim(), coords.len());
    let mut partials: Vec<(ParamCoord, f64)> = Vec::new();
    for (row, &s) in system.states().iter().enumerate() {
        for pair in model.pairs(s) {
            let a = model.pair_action(pair);
            let mu = policy.probs()[pair];
            for t in model.transitions(pair) {
                partials.clear();
                model.cost().partials(s, a, t.next, params, &mut partials);
                for &(coord, d) in &partials {
                    let j = column_of[layout.flat_index(coord)];
                    if j != usize::MAX {
                        b[(row, j)] += mu * t.prob * d;
                    }
                }
            }
        }
    }
    let x = system.solve_columns(b)?;
    Ok((system, x))
}

/// `g_θ = ∂V*/∂θ` over all states for a single coordinate.
pub fn value_gradient(
    model: &ModelSpec,
    params: &ParameterVector,
    policy: &SoftPolicy,
    coord: ParamCoord,
    tol: f64,
) -> Result<Vec<f64>, SolverError> {
    let flat = model.layout().flat_index(coord);
    let (system, x) = gradient_matrix(model, params, policy, tol, &[flat])?;
    let mut g = vec![0.0; model.n_states()];
    for (i, &s) in system.states().iter().enumerate() {
        g[s] = x[(i, 0)];
    }
    Ok(g)
}

/// Gradients for every flat coordinate, sharing one factorization.
pub fn value_gradients(
    model: &ModelSpec,
    params: &ParameterVector,
    policy: &SoftPolicy,
    tol: f64,
) -> Result<GradientTable, SolverError> {
    let n = model.n_states();
    let coords: Vec<usize> = (0..model.layout().len()).collect();
    let mut values = vec![0.0; coords.len() * n];
    if !coords.is_empty() {
        let (system, x) = gradient_matrix(model, params, policy, tol, &coords)?;
        for (j, &flat) in coords.iter().enumerate() {
            for (i, &s) in system.states().iter().enumerate() {
                values[flat * n + s] = x[(i, j)];
            }
        }
    }
    Ok(GradientTable {
        n_states: n,
        values,
    })
}

/// Sums each gradient over states with the model's objective weights.
pub fn stacks_from_gradients(model: &ModelSpec, grads: &GradientTable) -> DerivativeStacks {
    let w = model.weights();
    let total: Vec<f64> = (0..grads.n_coords())
        .map(|flat| grads.coord(flat).iter().zip(w).map(|(g, w)| g * w).sum())
        .collect();
    let split = model.layout().n_prescribed();
    DerivativeStacks {
        g: total[..split].to_vec(),
        f: total[split..].to_vec(),
    }
}

/// Gradient table and the `F`/`G` stacks at `(Υ, μ)`.
pub fn assemble_stacks(
    model: &ModelSpec,
    params: &ParameterVector,
    policy: &SoftPolicy,
) -> Result<(GradientTable, DerivativeStacks), SolverError> {
    let grads = value_gradients(model, params, policy, crate::soft_solver::DEFAULT_TOL)?;
    let stacks = stacks_from_gradients(model, &grads);
    Ok((grads, stacks))
}
