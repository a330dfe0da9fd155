//! Independent reference computations over the path space.
//!
//! [`brute_force_value`] propagates the exact state distribution of the
//! Markov chain induced by `μ` for `H` hops, which equals the expectation over
//! all paths of the discounted per-hop cost
//! `c + (γ/β)(log p + log μ)`. [`enumerate_paths_value`] sums the same
//! quantity path by path and is used to cross-check the propagation on tiny
//! models.

use thiserror::Error;

use crate::model::{ModelSpec, ParameterVector};
use crate::soft_solver::SoftPolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("horizon {horizon} leaves a tail bound of {bound:e} above the tolerance {tol:e}")]
    HorizonTooShort {
        horizon: usize,
        bound: f64,
        tol: f64,
    },
    #[error("cost c({state},{action},{next}) is not finite")]
    NonFiniteCost {
        state: usize,
        action: usize,
        next: usize,
    },
    #[error("path enumeration would visit more than {0} paths")]
    TooManyPaths(usize),
}

/// Expected one-hop cost `Σ_a μ Σ_{s'} p·(c + T log p + T log μ)` per state.
fn expected_hop_cost(
    model: &ModelSpec,
    params: &ParameterVector,
    policy: &SoftPolicy,
) -> Result<Vec<f64>, OracleError> {
    let temp = model.gamma() / model.beta();
    let mut out = vec![0.0; model.n_states()];
    for (s, o) in out.iter_mut().enumerate() {
        if s == model.terminal() {
            continue;
        }
        for pair in model.pairs(s) {
            let a = model.pair_action(pair);
            let mu = policy.probs()[pair];
            for t in model.transitions(pair) {
                let c = model.cost().cost(s, a, t.next, params);
                if !c.is_finite() {
                    return Err(OracleError::NonFiniteCost {
                        state: s,
                        action: a,
                        next: t.next,
                    });
                }
                *o += mu * t.prob * (c + temp * t.prob.ln() + temp * mu.ln());
            }
        }
    }
    Ok(out)
}

/// Value estimate after `horizon` hops.
///
/// For `γ < 1` the neglected tail is at most `γ^H·c̄_max/(1 − γ)` and must
/// not exceed `tol`. For `γ = 1` every path must have been absorbed after
/// `H` hops (remaining non-terminal mass exactly zero).
pub fn brute_force_value(
    model: &ModelSpec,
    params: &ParameterVector,
    policy: &SoftPolicy,
    horizon: usize,
    tol: f64,
) -> Result<Vec<f64>, OracleError> {
    let hop = expected_hop_cost(model, params, policy)?;
    let n = model.n_states();
    let delta = model.terminal();
    let gamma = model.gamma();
    let cmax = hop.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if gamma < 1.0 {
        let bound = gamma.powi(horizon as i32) * cmax / (1.0 - gamma);
        if bound > tol {
            return Err(OracleError::HorizonTooShort {
                horizon,
                bound,
                tol,
            });
        }
    }
    let mut values = vec![0.0; n];
    let mut residual_mass = 0.0f64;
    for source in 0..n {
        if source == delta {
            continue;
        }
        let mut dist = vec![0.0; n];
        dist[source] = 1.0;
        let mut disc = 1.0;
        let mut v = 0.0;
        for _ in 0..horizon {
            v += disc * dist.iter().zip(&hop).map(|(d, c)| d * c).sum::<f64>();
            let mut next = vec![0.0; n];
            for (s, &d) in dist.iter().enumerate() {
                if d == 0.0 || s == delta {
                    continue;
                }
                for pair in model.pairs(s) {
                    let mu = policy.probs()[pair];
                    for t in model.transitions(pair) {
                        next[t.next] += d * mu * t.prob;
                    }
                }
            }
            dist = next;
            disc *= gamma;
        }
        values[source] = v;
        let left: f64 = dist
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != delta)
            .map(|(_, d)| d)
            .sum();
        residual_mass = residual_mass.max(left);
    }
    if gamma >= 1.0 && residual_mass > 0.0 {
        return Err(OracleError::HorizonTooShort {
            horizon,
            bound: residual_mass * cmax,
            tol,
        });
    }
    Ok(values)
}

/// Literal sum over every action/state path of length at most `horizon`
/// (paths stop at the terminal state). Exponential; tiny models only.
pub fn enumerate_paths_value(
    model: &ModelSpec,
    params: &ParameterVector,
    policy: &SoftPolicy,
    horizon: usize,
) -> Result<Vec<f64>, OracleError> {
    const LIMIT: usize = 5_000_000;
    let temp = model.gamma() / model.beta();
    let gamma = model.gamma();
    let mut visited = 0usize;

    #[allow(clippy::too_many_arguments)]
    fn walk(
        model: &ModelSpec,
        params: &ParameterVector,
        policy: &SoftPolicy,
        s: usize,
        depth: usize,
        weight: f64,
        disc: f64,
        temp: f64,
        gamma: f64,
        visited: &mut usize,
    ) -> Result<f64, OracleError> {
        *visited += 1;
        if *visited > LIMIT {
            return Err(OracleError::TooManyPaths(LIMIT));
        }
        if depth == 0 || s == model.terminal() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for pair in model.pairs(s) {
            let a = model.pair_action(pair);
            let mu = policy.probs()[pair];
            for t in model.transitions(pair) {
                let w = weight * mu * t.prob;
                let c = model.cost().cost(s, a, t.next, params);
                if !c.is_finite() {
                    return Err(OracleError::NonFiniteCost {
                        state: s,
                        action: a,
                        next: t.next,
                    });
                }
                total += w * disc * (c + temp * t.prob.ln() + temp * mu.ln());
                total += walk(
                    model,
                    params,
                    policy,
                    t.next,
                    depth - 1,
                    w,
                    disc * gamma,
                    temp,
                    gamma,
                    visited,
                )?;
            }
        }
        Ok(total)
    }

    (0..model.n_states())
        .map(|s| {
            walk(
                model,
                params,
                policy,
                s,
                horizon,
                1.0,
                1.0,
                temp,
                gamma,
                &mut visited,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::harness::random::{random_model, random_policy, RandomModelShape};
    use crate::model::TableCost;
    use crate::soft_solver::soft_policy_value;

    #[test]
    fn one_hop_is_the_cost() {
        let m = ModelSpec::builder(2, 1, 1)
            .deterministic(0, 0, 1)
            .deterministic(1, 0, 1)
            .cost(Arc::new(TableCost::from_fn(2, 1, |s, _, _| {
                if s == 0 {
                    2.5
                } else {
                    0.0
                }
            })))
            .build()
            .unwrap();
        let p = ParameterVector::zeros(m.layout().clone());
        let mu = SoftPolicy::from_probs(&m, vec![1.0, 1.0]).unwrap();
        assert_eq!(
            brute_force_value(&m, &p, &mu, 1, 0.0).unwrap(),
            vec![2.5, 0.0]
        );
        assert_eq!(
            enumerate_paths_value(&m, &p, &mu, 3).unwrap(),
            vec![2.5, 0.0]
        );
    }

    #[test]
    fn agrees_with_policy_evaluation_on_discounted_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let (m, p) = random_model(&mut rng, RandomModelShape::new(4, 2, 0.9, 1.5));
            let mu = random_policy(&mut rng, &m, 0.05);
            // tail bound γ^60·c̄_max/(1−γ), reported by a zero-tolerance call
            let tol = match brute_force_value(&m, &p, &mu, 60, 0.0) {
                Err(OracleError::HorizonTooShort { bound, .. }) => bound,
                other => panic!("{other:?}"),
            };
            let bf = brute_force_value(&m, &p, &mu, 60, tol).unwrap();
            let exact = soft_policy_value(&m, &p, &mu, 1e-12).unwrap();
            assert!(crate::numeric::max_abs_diff(&bf, &exact) <= tol);
            // at a long horizon the propagation is exact to rounding
            let bf = brute_force_value(&m, &p, &mu, 400, 1e-12).unwrap();
            assert!(crate::numeric::max_abs_diff(&bf, &exact) <= 1e-10);
        }
    }

    #[test]
    fn enumeration_matches_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let shape = RandomModelShape {
            max_branches: 2,
            ..RandomModelShape::new(4, 2, 0.9, 1.5)
        };
        let (m, p) = random_model(&mut rng, shape);
        let mu = random_policy(&mut rng, &m, 0.05);
        let h = 8;
        let bf = brute_force_value(&m, &p, &mu, h, f64::INFINITY).unwrap();
        let en = enumerate_paths_value(&m, &p, &mu, h).unwrap();
        assert!(crate::numeric::max_abs_diff(&bf, &en) < 1e-12);
    }

    #[test]
    fn short_horizon_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (m, p) = random_model(&mut rng, RandomModelShape::new(4, 2, 0.9, 1.5));
        let mu = random_policy(&mut rng, &m, 0.05);
        assert!(matches!(
            brute_force_value(&m, &p, &mu, 5, 1e-6),
            Err(OracleError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn concentrated_policy_follows_the_dominant_path() {
        // s0 -a0-> s1 -a0-> δ with costs 1 and 2; the alternatives go straight to δ at cost 4
        let mut cost = TableCost::zeros(3, 2);
        cost.set(0, 0, 1, 1.0);
        cost.set(1, 0, 2, 2.0);
        cost.set(0, 1, 2, 4.0);
        cost.set(1, 1, 2, 4.0);
        let m = ModelSpec::builder(3, 2, 2)
            .deterministic(0, 0, 1)
            .deterministic(0, 1, 2)
            .deterministic(1, 0, 2)
            .deterministic(1, 1, 2)
            .deterministic(2, 0, 2)
            .deterministic(2, 1, 2)
            .beta(100.0)
            .cost(Arc::new(cost))
            .build()
            .unwrap();
        let p = ParameterVector::zeros(m.layout().clone());
        let mu = SoftPolicy::from_probs(&m, vec![0.999, 0.001, 0.999, 0.001, 0.5, 0.5]).unwrap();
        let v = brute_force_value(&m, &p, &mu, 3, 0.0).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-2, "{}", v[0]);
    }
}
