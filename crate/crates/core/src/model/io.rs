//! JSON model documents.
//!
//! ```json
//! {
//!   "states": ["s0", "s1", "goal"],
//!   "actions": ["left", "right"],
//!   "terminal": 2,
//!   "kernel": [[[0, 1, 0], [0, 0, 1]], [[1, 0, 0], [0, 0, 1]], [[0, 0, 1], [0, 0, 1]]],
//!   "gamma": 0.9,
//!   "beta": 2.0,
//!   "masks": [[0, 1], [0, 1], [0]],
//!   "partition": { "states": [1], "actions": [] },
//!   "params": { "zeta": [[0.0], [1.0], [2.0]], "eta": [[], []] },
//!   "cost": [{ "kind": "squared_euclidean", "weight": 1.0 }],
//!   "weights": [1.0, 1.0, 0.0]
//! }
//! ```
//!
//! `kernel` is dense `[s][a][s']`. `partition` lists the manipulable states and
//! actions (everything else is prescribed). Parameter dimensions are taken
//! from `params`. `cost` is a list of terms that are summed; an empty list
//! means zero cost. `masks` and `weights` are optional.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    ActionTargetCost, CostFunction, ModelError, ModelSpec, ParameterVector, SquaredEuclideanCost,
    SumCost, TableCost,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    #[serde(default)]
    pub states: Vec<usize>,
    #[serde(default)]
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    #[serde(default)]
    pub zeta: Vec<Vec<f64>>,
    #[serde(default)]
    pub eta: Vec<Vec<f64>>,
}

impl ParamsDocument {
    pub fn from_params(p: &ParameterVector) -> Self {
        let l = p.layout();
        ParamsDocument {
            zeta: (0..l.n_states()).map(|s| p.zeta(s).to_vec()).collect(),
            eta: (0..l.n_actions()).map(|a| p.eta(a).to_vec()).collect(),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// Constant costs `[s][a][s']`.
    Table { values: Vec<Vec<Vec<f64>>> },
    /// `w · ‖ζ_s − ζ_{s'}‖²`.
    SquaredEuclidean {
        #[serde(default = "one")]
        weight: f64,
    },
    /// `w · ‖η_a − t[s][a]‖²`.
    ActionTarget {
        #[serde(default = "one")]
        weight: f64,
        targets: Vec<Vec<Vec<f64>>>,
    },
}

impl CostSpec {
    fn build(&self, n: usize, m: usize, d_eta: usize) -> Result<Arc<dyn CostFunction>, ModelError> {
        let shape = |msg: &str| Err(ModelError::Shape(msg.to_string()));
        match self {
            CostSpec::Table { values } => {
                if values.len() != n
                    || values
                        .iter()
                        .any(|r| r.len() != m || r.iter().any(|c| c.len() != n))
                {
                    return shape("cost table must be [states][actions][states]");
                }
                Ok(Arc::new(TableCost::from_fn(n, m, |s, a, s2| {
                    values[s][a][s2]
                })))
            }
            CostSpec::SquaredEuclidean { weight } => {
                Ok(Arc::new(SquaredEuclideanCost { weight: *weight }))
            }
            CostSpec::ActionTarget { weight, targets } => {
                if targets.len() != n
                    || targets
                        .iter()
                        .any(|r| r.len() != m || r.iter().any(|t| t.len() != d_eta))
                {
                    return shape("action targets must be [states][actions][d_eta]");
                }
                Ok(Arc::new(ActionTargetCost::new(*weight, targets.clone())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub terminal: usize,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
    pub beta: f64,
    #[serde(default)]
    pub masks: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub partition: Partition,
    #[serde(default)]
    pub params: ParamsDocument,
    #[serde(default)]
    pub cost: Vec<CostSpec>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl ModelDocument {
    /// Builds the model and its initial parameters. The model is not
    /// validated here; see [`validate_model`](super::validate_model).
    pub fn build(&self) -> Result<(ModelSpec, ParameterVector), ModelError> {
        let (n, m) = (self.states.len(), self.actions.len());
        if self.kernel.len() != n
            || self
                .kernel
                .iter()
                .any(|r| r.len() != m || r.iter().any(|row| row.len() != n))
        {
            return Err(ModelError::Shape(
                "kernel must be [states][actions][states]".into(),
            ));
        }
        let zeta = if self.params.zeta.is_empty() {
            vec![Vec::new(); n]
        } else {
            self.params.zeta.clone()
        };
        let eta = if self.params.eta.is_empty() {
            vec![Vec::new(); m]
        } else {
            self.params.eta.clone()
        };
        let d_zeta = zeta.first().map_or(0, |z| z.len());
        let d_eta = eta.first().map_or(0, |e| e.len());

        let mut terms = Vec::with_capacity(self.cost.len());
        for spec in &self.cost {
            terms.push(spec.build(n, m, d_eta)?);
        }
        let cost: Arc<dyn CostFunction> = match terms.len() {
            0 => Arc::new(TableCost::zeros(n, m)),
            1 => terms.pop().unwrap(),
            _ => Arc::new(SumCost { terms }),
        };

        let mut b = ModelSpec::builder(n, m, self.terminal)
            .state_names(self.states.clone())
            .action_names(self.actions.clone())
            .gamma(self.gamma)
            .beta(self.beta)
            .cost(cost)
            .dims(d_zeta, d_eta)
            .manipulable_states(&self.partition.states)
            .manipulable_actions(&self.partition.actions);
        for (s, row) in self.kernel.iter().enumerate() {
            for (a, probs) in row.iter().enumerate() {
                for (s2, &p) in probs.iter().enumerate() {
                    if p != 0.0 {
                        b.add_transition(s, a, s2, p);
                    }
                }
            }
        }
        if let Some(masks) = &self.masks {
            b = b.masks(masks.clone());
        }
        if let Some(w) = &self.weights {
            b = b.weights(w.clone());
        }
        let model = b.build()?;
        let params = ParameterVector::from_blocks(model.layout().clone(), &zeta, &eta)?;
        Ok((model, params))
    }
}

#[cfg(test)]
mod tests {
    use super::super::validate_model;
    use super::*;

    const DOC: &str = r#"{
        "states": ["s0", "s1", "goal"],
        "actions": ["left", "right"],
        "terminal": 2,
        "kernel": [[[0, 1, 0], [0, 0, 1]], [[1, 0, 0], [0, 0, 1]], [[0, 0, 1], [0, 0, 1]]],
        "gamma": 0.9,
        "beta": 2.0,
        "masks": [[0, 1], [0, 1], [0]],
        "partition": { "states": [1], "actions": [] },
        "params": { "zeta": [[0.0], [1.0], [2.0]], "eta": [[], []] },
        "cost": [{ "kind": "squared_euclidean", "weight": 1.0 }]
    }"#;

    #[test]
    fn documented_example_builds_and_validates() {
        let doc: ModelDocument = serde_json::from_str(DOC).unwrap();
        let (model, params) = doc.build().unwrap();
        assert_eq!(model.n_states(), 3);
        assert_eq!(model.allowed(2), &[0]);
        assert_eq!(model.layout().n_manipulable(), 1);
        assert_eq!(params.manipulable(), vec![1.0]);
        assert!(validate_model(&model, &params).passed());
        assert_eq!(model.cost().cost(0, 1, 2, &params), 4.0);
    }

    #[test]
    fn unknown_cost_kind_is_rejected() {
        let bad = DOC.replace("squared_euclidean", "manhattan");
        assert!(serde_json::from_str::<ModelDocument>(&bad).is_err());
    }

    #[test]
    fn ragged_kernel_is_rejected() {
        let mut doc: ModelDocument = serde_json::from_str(DOC).unwrap();
        doc.kernel[0].pop();
        assert!(doc.build().is_err());
    }
}
