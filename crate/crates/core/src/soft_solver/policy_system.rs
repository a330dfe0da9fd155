use nalgebra::{DMatrix, DVector};

use super::{SoftPolicy, SolverError};
use crate::model::ModelSpec;

/// Above this many non-terminal states the system is solved by iteration.
const DENSE_LIMIT: usize = 512;
const ITERATIVE_MAX_SWEEPS: usize = 1_000_000;

/// `(I − γ P_μ)` restricted to the non-terminal states, factored once and
/// reused for any number of right-hand sides.
pub(crate) struct PolicySystem {
    n_states: usize,
    /// State index of each system row.
    states: Vec<usize>,
    kind: Kind,
}

enum Kind {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Iterative {
        rows: Vec<Vec<(usize, f64)>>,
        gamma: f64,
        tol: f64,
    },
}

impl PolicySystem {
    pub(crate) fn new(
        model: &ModelSpec,
        policy: &SoftPolicy,
        tol: f64,
    ) -> Result<Self, SolverError> {
        let n = model.n_states();
        let delta = model.terminal();
        let states: Vec<usize> = (0..n).filter(|&s| s != delta).collect();
        let mut row_of = vec![usize::MAX; n];
        for (i, &s) in states.iter().enumerate() {
            row_of[s] = i;
        }
        // sparse P_μ rows, terminal column dropped
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(states.len());
        for &s in &states {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for pair in model.pairs(s) {
                let mu = policy.probs()[pair];
                for t in model.transitions(pair) {
                    if t.next == delta {
                        continue;
                    }
                    let j = row_of[t.next];
                    match row.iter_mut().find(|(c, _)| *c == j) {
                        Some((_, v)) => *v += mu * t.prob,
                        None => row.push((j, mu * t.prob)),
                    }
                }
            }
            rows.push(row);
        }
        let gamma = model.gamma();
        let kind = if states.len() <= DENSE_LIMIT {
            let k = states.len();
            let mut a = DMatrix::<f64>::identity(k, k);
            for (i, row) in rows.iter().enumerate() {
                for &(j, p) in row {
                    a[(i, j)] -= gamma * p;
                }
            }
            let lu = a.lu();
            let u = lu.u();
            let scale = (0..k).fold(0.0f64, |m, i| m.max(u[(i, i)].abs()));
            if (0..k).any(|i| u[(i, i)].abs() <= 1e-13 * scale.max(1.0)) {
                return Err(SolverError::Singular);
            }
            Kind::Dense(lu)
        } else {
            Kind::Iterative { rows, gamma, tol }
        };
        Ok(PolicySystem {
            n_states: n,
            states,
            kind,
        })
    }

    /// Number of system rows (non-terminal states).
    pub(crate) fn dim(&self) -> usize {
        self.states.len()
    }

    pub(crate) fn states(&self) -> &[usize] {
        &self.states
    }

    /// Solves for a right-hand side indexed by state; the terminal entry of
    /// `rhs` is ignored and the terminal entry of the result is zero.
    pub(crate) fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        let b = DMatrix::from_iterator(self.dim(), 1, self.states.iter().map(|&s| rhs[s]));
        let x = self.solve_columns(b)?;
        let mut out = vec![0.0; self.n_states];
        for (i, &s) in self.states.iter().enumerate() {
            out[s] = x[(i, 0)];
        }
        Ok(out)
    }

    /// Solves for several right-hand sides at once; rows follow
    /// [`states`](Self::states).
    pub(crate) fn solve_columns(&self, mut b: DMatrix<f64>) -> Result<DMatrix<f64>, SolverError> {
        match &self.kind {
            Kind::Dense(lu) => {
                if !lu.solve_mut(&mut b) {
                    return Err(SolverError::Singular);
                }
            }
            Kind::Iterative { rows, gamma, tol } => {
                for mut col in b.column_iter_mut() {
                    let rhs = DVector::from_column_slice(col.as_slice());
                    let mut x = rhs.clone();
                    let mut converged = false;
                    for _ in 0..ITERATIVE_MAX_SWEEPS {
                        let mut delta = 0.0f64;
                        let prev = x.clone();
                        for (i, row) in rows.iter().enumerate() {
                            let v =
                                rhs[i] + gamma * row.iter().map(|&(j, p)| p * prev[j]).sum::<f64>();
                            delta = delta.max((v - x[i]).abs());
                            x[i] = v;
                        }
                        if !delta.is_finite() {
                            return Err(SolverError::Singular);
                        }
                        if delta <= *tol {
                            converged = true;
                            break;
                        }
                    }
                    if !converged {
                        return Err(SolverError::Singular);
                    }
                    col.copy_from(&x);
                }
            }
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Singular);
        }
        Ok(b)
    }
}
