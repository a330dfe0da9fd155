//! Greedy routes under the most probable action.

use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;
use crate::soft_solver::SoftPolicy;

/// States visited from `source` by taking, at each state, the most probable
/// action whose most likely successor has not been visited yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub source: usize,
    /// Visited states after `source`, ending at the terminal state when
    /// `reaches_terminal` holds.
    pub hops: Vec<usize>,
    pub reaches_terminal: bool,
}

impl Route {
    /// First state after the source, if any.
    pub fn first_hop(&self) -> Option<usize> {
        self.hops.first().copied()
    }
}

fn likely_successor(model: &ModelSpec, pair: usize) -> usize {
    let mut best = model.transitions(pair)[0];
    for t in model.transitions(pair) {
        if t.prob > best.prob {
            best = *t;
        }
    }
    best.next
}

/// Follows the greedy chain from `source`. Actions leading back into the
/// chain are skipped, since a soft policy near the divergence threshold of
/// an undiscounted model can put its largest mass on a cycle. The chain stops
/// at the terminal state or when every action of a state leads back.
pub fn greedy_route(model: &ModelSpec, policy: &SoftPolicy, source: usize) -> Route {
    let n = model.n_states();
    let mut seen = vec![false; n];
    seen[source] = true;
    let mut hops = Vec::new();
    let mut s = source;
    while s != model.terminal() {
        let row = policy.row(model, s);
        let mut best: Option<(f64, usize)> = None;
        for (k, pair) in model.pairs(s).enumerate() {
            let next = likely_successor(model, pair);
            if !seen[next] && best.is_none_or(|(p, _)| row[k] > p) {
                best = Some((row[k], next));
            }
        }
        let Some((_, next)) = best else { break };
        hops.push(next);
        seen[next] = true;
        s = next;
    }
    let reaches_terminal = s == model.terminal();
    Route {
        source,
        hops,
        reaches_terminal,
    }
}

pub fn greedy_routes(model: &ModelSpec, policy: &SoftPolicy, sources: &[usize]) -> Vec<Route> {
    sources
        .iter()
        .map(|&s| greedy_route(model, policy, s))
        .collect()
}
