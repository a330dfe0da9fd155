use std::fmt;
use std::sync::Arc;

use super::{ParamCoord, ParameterVector};

/// Transition cost `c(s, a, s'; Υ)` with analytic partial derivatives.
pub trait CostFunction: Send + Sync + fmt::Debug {
    fn cost(&self, state: usize, action: usize, next: usize, params: &ParameterVector) -> f64;

    /// Appends every non-zero partial `∂c/∂θ` of `c(state, action, next; Υ)`
    /// to `out`. A coordinate may appear more than once; entries are summed.
    fn partials(
        &self,
        state: usize,
        action: usize,
        next: usize,
        params: &ParameterVector,
        out: &mut Vec<(ParamCoord, f64)>,
    );
}

/// Parameter-independent cost table indexed `[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TableCost {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl TableCost {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        TableCost {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions * n_states],
        }
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = TableCost::zeros(n_states, n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                for s2 in 0..n_states {
                    t.values[(s * n_actions + a) * n_states + s2] = f(s, a, s2);
                }
            }
        }
        t
    }

    pub fn set(&mut self, state: usize, action: usize, next: usize, value: f64) {
        self.values[(state * self.n_actions + action) * self.n_states + next] = value;
    }
}

impl CostFunction for TableCost {
    fn cost(&self, state: usize, action: usize, next: usize, _: &ParameterVector) -> f64 {
        self.values[(state * self.n_actions + action) * self.n_states + next]
    }

    fn partials(
        &self,
        _: usize,
        _: usize,
        _: usize,
        _: &ParameterVector,
        _: &mut Vec<(ParamCoord, f64)>,
    ) {
    }
}

/// `c = w · ‖ζ_s − ζ_{s'}‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredEuclideanCost {
    pub weight: f64,
}

impl Default for SquaredEuclideanCost {
    fn default() -> Self {
        SquaredEuclideanCost { weight: 1.0 }
    }
}

impl CostFunction for SquaredEuclideanCost {
    fn cost(&self, state: usize, _: usize, next: usize, params: &ParameterVector) -> f64 {
        let (x, y) = (params.zeta(state), params.zeta(next));
        self.weight * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn partials(
        &self,
        state: usize,
        _: usize,
        next: usize,
        params: &ParameterVector,
        out: &mut Vec<(ParamCoord, f64)>,
    ) {
        if state == next {
            return;
        }
        let (x, y) = (params.zeta(state), params.zeta(next));
        for (dim, (a, b)) in x.iter().zip(y).enumerate() {
            let g = 2.0 * self.weight * (a - b);
            out.push((ParamCoord::State { state, dim }, g));
            out.push((ParamCoord::State { state: next, dim }, -g));
        }
    }
}

/// `c = w · ‖η_a − t(s, a)‖²` for fixed per-pair targets `t(s, a)`; zero on
/// self-transitions so that an absorbing terminal row stays cost-free.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTargetCost {
    pub weight: f64,
    n_actions: usize,
    targets: Vec<Vec<f64>>,
}

impl ActionTargetCost {
    /// `targets[s][a]` must have the action-parameter dimension.
    pub fn new(weight: f64, targets: Vec<Vec<Vec<f64>>>) -> Self {
        let n_actions = targets.first().map_or(0, |r| r.len());
        ActionTargetCost {
            weight,
            n_actions,
            targets: targets.into_iter().flatten().collect(),
        }
    }
}

impl CostFunction for ActionTargetCost {
    fn cost(&self, state: usize, action: usize, next: usize, params: &ParameterVector) -> f64 {
        if state == next {
            return 0.0;
        }
        let t = &self.targets[state * self.n_actions + action];
        let eta = params.eta(action);
        self.weight
            * eta
                .iter()
                .zip(t)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
    }

    fn partials(
        &self,
        state: usize,
        action: usize,
        next: usize,
        params: &ParameterVector,
        out: &mut Vec<(ParamCoord, f64)>,
    ) {
        if state == next {
            return;
        }
        let t = &self.targets[state * self.n_actions + action];
        for (dim, (a, b)) in params.eta(action).iter().zip(t).enumerate() {
            out.push((
                ParamCoord::Action { action, dim },
                2.0 * self.weight * (a - b),
            ));
        }
    }
}

/// Sum of several cost terms.
#[derive(Debug, Clone)]
pub struct SumCost {
    pub terms: Vec<Arc<dyn CostFunction>>,
}

impl CostFunction for SumCost {
    fn cost(&self, state: usize, action: usize, next: usize, params: &ParameterVector) -> f64 {
        self.terms
            .iter()
            .map(|t| t.cost(state, action, next, params))
            .sum()
    }

    fn partials(
        &self,
        state: usize,
        action: usize,
        next: usize,
        params: &ParameterVector,
        out: &mut Vec<(ParamCoord, f64)>,
    ) {
        for t in &self.terms {
            t.partials(state, action, next, params, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::ParamLayout;
    use super::*;

    fn positions(points: &[[f64; 2]]) -> ParameterVector {
        let l = Arc::new(ParamLayout::new(
            2,
            0,
            vec![false; points.len()],
            vec![false],
        ));
        let z: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        ParameterVector::from_blocks(l, &z, &[vec![]]).unwrap()
    }

    #[test]
    fn three_four_five() {
        let p = positions(&[[0.0, 0.0], [3.0, 4.0]]);
        assert_eq!(SquaredEuclideanCost::default().cost(0, 0, 1, &p), 25.0);
    }

    #[test]
    fn squared_euclidean_partials() {
        let p = positions(&[[1.0, 2.0], [4.0, -2.0]]);
        let mut out = Vec::new();
        SquaredEuclideanCost::default().partials(0, 0, 1, &p, &mut out);
        assert!(out.contains(&(ParamCoord::State { state: 0, dim: 0 }, -6.0)));
        assert!(out.contains(&(ParamCoord::State { state: 1, dim: 0 }, 6.0)));
        assert!(out.contains(&(ParamCoord::State { state: 0, dim: 1 }, 8.0)));
        out.clear();
        SquaredEuclideanCost::default().partials(1, 0, 1, &p, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn action_target_partials_match_difference_quotient() {
        let l = Arc::new(ParamLayout::new(0, 2, vec![false; 2], vec![false, true]));
        let p =
            ParameterVector::from_blocks(l, &[vec![], vec![]], &[vec![0.5, -1.0], vec![2.0, 0.25]])
                .unwrap();
        let targets = vec![
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        ];
        let c = ActionTargetCost::new(1.5, targets);
        let mut out = Vec::new();
        c.partials(0, 1, 1, &p, &mut out);
        for (coord, g) in out {
            let h = 1e-6;
            let fd = (c.cost(0, 1, 1, &p.shifted(coord, h))
                - c.cost(0, 1, 1, &p.shifted(coord, -h)))
                / (2.0 * h);
            assert!((fd - g).abs() < 1e-6, "{coord:?}: {fd} vs {g}");
        }
    }
}
