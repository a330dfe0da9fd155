//! Seeded random instances for property tests and the verify suite.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{
    ActionTargetCost, CostFunction, ModelSpec, ParameterVector, SquaredEuclideanCost, SumCost,
    TableCost,
};
use crate::soft_solver::SoftPolicy;

/// Shape of a random model. The terminal state is the last state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomModelShape {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub beta: f64,
    /// Maximum number of successors per kernel row.
    pub max_branches: usize,
}

impl RandomModelShape {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64, beta: f64) -> Self {
        RandomModelShape {
            n_states,
            n_actions,
            gamma,
            beta,
            max_branches: 3,
        }
    }
}

/// Random stochastic model with a proper-policy structure.
///
/// Action 0 is allowed everywhere and every row of action 0 has a successor
/// with a larger index, so any strictly positive policy reaches the terminal
/// state. With `γ = 1` every successor has a larger index. Costs mix a
/// random table, squared distances between 2-D state parameters and 1-D
/// action targets, so every parameter coordinate matters.
pub fn random_model<R: Rng>(rng: &mut R, shape: RandomModelShape) -> (ModelSpec, ParameterVector) {
    let n = shape.n_states.max(2);
    let m = shape.n_actions.max(1);
    let delta = n - 1;
    let mut b = ModelSpec::builder(n, m, delta)
        .gamma(shape.gamma)
        .beta(shape.beta)
        .dims(2, 1);
    let mut masks = Vec::with_capacity(n);
    for s in 0..n {
        if s == delta {
            masks.push((0..m).collect::<Vec<_>>());
            continue;
        }
        let mut allowed = vec![0];
        allowed.extend((1..m).filter(|_| rng.random_bool(0.7)));
        masks.push(allowed);
    }
    for (s, allowed) in masks.iter().enumerate() {
        for &a in allowed {
            if s == delta {
                b.add_transition(s, a, delta, 1.0);
                continue;
            }
            // undiscounted models get forward-only kernels: a cycle can carry an
            // entropy bonus larger than its cost, leaving no finite fixed point
            let lo = if shape.gamma >= 1.0 { s + 1 } else { 0 };
            let k = rng.random_range(1..=shape.max_branches.clamp(1, n - lo));
            let mut nexts: Vec<usize> = (lo..n).collect();
            nexts.shuffle(rng);
            nexts.truncate(k);
            if a == 0 && !nexts.iter().any(|&x| x > s) {
                nexts[0] = rng.random_range(s + 1..n);
                nexts.sort_unstable();
                nexts.dedup();
            }
            let weights: Vec<f64> = nexts.iter().map(|_| 0.1 + rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            for (i, (&x, w)) in nexts.iter().zip(&weights).enumerate() {
                // last entry absorbs rounding so the row sums to 1
                let p = if i + 1 == nexts.len() {
                    1.0 - acc
                } else {
                    w / total
                };
                acc += p;
                b.add_transition(s, a, x, p);
            }
        }
    }
    let table = TableCost::from_fn(
        n,
        m,
        |s, _, _| if s == delta { 0.0 } else { rng.random::<f64>() },
    );
    let targets: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| (0..m).map(|_| vec![rng.random_range(-1.0..1.0)]).collect())
        .collect();
    let cost: Arc<dyn CostFunction> = Arc::new(SumCost {
        terms: vec![
            Arc::new(table),
            Arc::new(SquaredEuclideanCost { weight: 0.5 }),
            Arc::new(ActionTargetCost::new(0.3, targets)),
        ],
    });
    let manip_states: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
    let manip_actions: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
    let model = b
        .masks(masks)
        .cost(cost)
        .manipulable_states(&manip_states)
        .manipulable_actions(&manip_actions)
        .build()
        .expect("random model is well formed");
    let zeta: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let eta: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
    let params = ParameterVector::from_blocks(model.layout().clone(), &zeta, &eta)
        .expect("blocks match the layout");
    (model, params)
}

/// Strictly positive random policy with entries bounded below by `floor`
/// before normalization.
pub fn random_policy<R: Rng>(rng: &mut R, model: &ModelSpec, floor: f64) -> SoftPolicy {
    let mut probs = vec![0.0; model.n_pairs()];
    for s in 0..model.n_states() {
        let pairs = model.pairs(s);
        let raw: Vec<f64> = pairs.clone().map(|_| floor + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        for (p, r) in probs[pairs].iter_mut().zip(&raw) {
            *p = r / total;
        }
    }
    SoftPolicy::from_probs(model, probs).expect("normalized positive rows")
}

/// Random table `Λ` with entries in `[-scale, scale]`, zero on the terminal rows.
pub fn random_lambda<R: Rng>(rng: &mut R, model: &ModelSpec, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; model.n_pairs()];
    for s in 0..model.n_states() {
        if s == model.terminal() {
            continue;
        }
        for pair in model.pairs(s) {
            out[pair] = rng.random_range(-scale..=scale);
        }
    }
    out
}
