//! Randomized property suite behind the `verify` subcommand.
//!
//! Every property runs on seeded random instances for each requested state
//! count and reports the first counterexample it finds.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::brute_force_value;
use super::random::{random_lambda, random_model, random_policy, RandomModelShape};
use super::routes::greedy_routes;
use super::trajectory::{parse_jsonl, write_jsonl, TrajectoryRecord};
use crate::controller::{control_law, ControlConfig};
use crate::model::{validate_model, ModelSpec, ParamLayout, ParameterVector, Violation};
use crate::numeric::{dot, max_abs_diff, norm2};
use crate::scenario::{build_model, UavScenario};
use crate::sensitivity::assemble_stacks;
use crate::soft_solver::{
    gibbs_policy, soft_bellman_operator, soft_policy_value, solve_fixed_point, FixedPointOptions,
    SoftPolicy,
};

/// Signature of a control law under test.
pub type ControlLaw = fn(&[f64], f64, &ControlConfig) -> Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub property: String,
    pub size: usize,
    pub cases: usize,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

const CASES: usize = 8;
const FP: FixedPointOptions = FixedPointOptions {
    tol: 1e-12,
    max_iter: 200_000,
};

/// Runs the suite with the crate's control law.
pub fn verify_suite(seed: u64, sizes: &[usize]) -> VerifyReport {
    verify_suite_with(seed, sizes, control_law)
}

/// Runs the suite with a substitute control law (for mutation testing).
pub fn verify_suite_with(seed: u64, sizes: &[usize], law: ControlLaw) -> VerifyReport {
    let mut report = VerifyReport::default();
    for (i, &size) in sizes.iter().enumerate() {
        if size < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32) ^ size as u64);
        let props: [(&str, &dyn Fn(&mut ChaCha8Rng, usize) -> Outcome); 15] = [
            (
                "model.validation_detects_bad_rows",
                &validation_detects_bad_rows,
            ),
            ("model.flatten_round_trip", &flatten_round_trip),
            ("soft_solver.contraction", &contraction),
            ("soft_solver.gibbs_optimality", &gibbs_optimality),
            ("soft_solver.policy_normalization", &policy_normalization),
            ("soft_solver.beta_monotonicity", &beta_monotonicity),
            (
                "soft_solver.policy_value_matches_path_oracle",
                &policy_value_matches_oracle,
            ),
            ("sensitivity.finite_differences", &finite_differences),
            ("sensitivity.linearity", &linearity),
            ("controller.derivative_identity", &|r, n| {
                derivative_identity(r, n, law)
            }),
            ("controller.lipschitz_bound", &|r, n| {
                lipschitz_bound(r, n, law)
            }),
            ("controller.lyapunov_consistency", &lyapunov_consistency),
            ("scenario.validates_and_relabels", &scenario_relabeling),
            ("harness.routes_reach_terminal", &routes_reach_terminal),
            ("harness.trajectory_round_trip", &trajectory_round_trip),
        ];
        for (name, f) in props {
            let outcome = f(&mut rng, size);
            report.results.push(PropertyResult {
                property: name.to_string(),
                size,
                cases: outcome.cases,
                passed: outcome.counterexample.is_none(),
                counterexample: outcome.counterexample,
            });
        }
    }
    report
}

#[derive(Default)]
struct Outcome {
    cases: usize,
    counterexample: Option<String>,
}

impl Outcome {
    /// Records one case; keeps the first failure.
    fn case(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok && self.counterexample.is_none() {
            self.counterexample = Some(describe());
        }
    }

    fn error(&mut self, e: impl std::fmt::Display) {
        self.case(false, || format!("unexpected error: {e}"));
    }
}

fn shape(rng: &mut ChaCha8Rng, n: usize) -> RandomModelShape {
    let gammas = [0.5, 0.9, 1.0];
    RandomModelShape::new(
        n,
        rng.random_range(1..=4),
        gammas[rng.random_range(0..3)],
        rng.random_range(0.5..5.0),
    )
}

fn validation_detects_bad_rows(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let s = shape(rng, n);
        let (m, p) = random_model(rng, s);
        out.case(validate_model(&m, &p).passed(), || {
            format!("random model failed validation: {m:?}")
        });
        // rebuild with one non-terminal row scaled by 0.9
        let bad_s = rng.random_range(0..n - 1);
        let bad_a = m.allowed(bad_s)[rng.random_range(0..m.allowed(bad_s).len())];
        let kernel = m.dense_kernel();
        let mut b = ModelSpec::builder(n, m.n_actions(), m.terminal())
            .masks((0..n).map(|s| m.allowed(s).to_vec()).collect())
            .cost(m.cost().clone())
            .dims(2, 1);
        for (s, row) in kernel.iter().enumerate() {
            for (a, probs) in row.iter().enumerate() {
                for (x, &pr) in probs.iter().enumerate() {
                    if pr > 0.0 {
                        let scale = if (s, a) == (bad_s, bad_a) { 0.9 } else { 1.0 };
                        b.add_transition(s, a, x, pr * scale);
                    }
                }
            }
        }
        match b.build() {
            Ok(bad) => {
                let zeta: Vec<Vec<f64>> = (0..n).map(|s| p.zeta(s).to_vec()).collect();
                let eta: Vec<Vec<f64>> = (0..m.n_actions()).map(|a| p.eta(a).to_vec()).collect();
                let q = ParameterVector::from_blocks(bad.layout().clone(), &zeta, &eta)
                    .expect("same dimensions");
                let report = validate_model(&bad, &q);
                let found = report.violations.iter().any(|v| {
                    matches!(v, Violation::RowNotStochastic { state, action, .. } if (*state, *action) == (bad_s, bad_a))
                });
                out.case(found, || {
                    format!("row ({bad_s},{bad_a}) scaled by 0.9 not reported: {report}")
                });
            }
            Err(e) => out.error(e),
        }
    }
    out
}

fn flatten_round_trip(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let (dz, de) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let m = rng.random_range(1..=4);
        let sm: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let am: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
        let layout = Arc::new(ParamLayout::new(dz, de, sm, am));
        let flat: Vec<f64> = (0..layout.len())
            .map(|_| rng.random_range(-1e3..1e3))
            .collect();
        match ParameterVector::unflatten(layout.clone(), &flat) {
            Ok(p) => {
                let again = ParameterVector::unflatten(layout, &p.flatten()).map(|q| q == p);
                out.case(p.flatten() == flat && again == Ok(true), || {
                    format!("dz={dz} de={de}: {flat:?}")
                });
            }
            Err(e) => out.error(e),
        }
    }
    out
}

fn contraction(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let s = shape(rng, n);
        let (m, p) = random_model(rng, s);
        let l1 = random_lambda(rng, &m, 5.0);
        let l2 = random_lambda(rng, &m, 5.0);
        match (
            soft_bellman_operator(&l1, &m, &p),
            soft_bellman_operator(&l2, &m, &p),
        ) {
            (Ok(t1), Ok(t2)) => {
                let lhs = max_abs_diff(&t1, &t2);
                let rhs = m.gamma() * max_abs_diff(&l1, &l2);
                out.case(lhs <= rhs + 1e-12, || {
                    format!("γ={}: {lhs} > {rhs}", m.gamma())
                });
            }
            (Err(e), _) | (_, Err(e)) => out.error(e),
        }
    }
    out
}

fn gibbs_optimality(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let s = shape(rng, n);
        let (m, p) = random_model(rng, s);
        let fp = match solve_fixed_point(&m, &p, None, FP) {
            Ok(fp) => fp,
            Err(e) => {
                out.error(e);
                continue;
            }
        };
        for _ in 0..25 {
            let mu = random_policy(rng, &m, 0.01);
            match soft_policy_value(&m, &p, &mu, 1e-12) {
                Ok(v) => {
                    let worst = (0..n)
                        .map(|s| fp.tables.vstar[s] - v[s])
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.case(worst <= 1e-9, || format!("V* exceeds V^μ by {worst:e}"));
                }
                Err(e) => out.error(e),
            }
        }
    }
    out
}

fn policy_normalization(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let mut s = shape(rng, n);
        s.beta = 10f64.powf(rng.random_range(-1.0..3.0));
        let (m, p) = random_model(rng, s);
        match solve_fixed_point(&m, &p, None, FP) {
            Ok(fp) => {
                let mu = gibbs_policy(&fp.tables, &m);
                let ok = SoftPolicy::from_probs(&m, mu.probs().to_vec());
                out.case(ok.is_ok(), || format!("β={}: {:?}", s.beta, ok.err()));
            }
            Err(e) => out.error(e),
        }
    }
    out
}

fn beta_monotonicity(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let s = shape(rng, n);
        let (m, p) = random_model(rng, s);
        let mut prev: Option<Vec<f64>> = None;
        for ratio in [1.0, 10.0, 100.0] {
            let mb = m.with_beta(ratio * m.gamma());
            match solve_fixed_point(&mb, &p, None, FP) {
                Ok(fp) => {
                    if let Some(prev) = &prev {
                        let worst = (0..n)
                            .map(|s| prev[s] - fp.tables.vstar[s])
                            .fold(f64::NEG_INFINITY, f64::max);
                        out.case(worst <= 1e-9, || {
                            format!("V* decreased by {worst:e} at β/γ={ratio}")
                        });
                    }
                    prev = Some(fp.tables.vstar);
                }
                Err(e) => out.error(e),
            }
        }
    }
    out
}

fn policy_value_matches_oracle(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let s = RandomModelShape::new(n, rng.random_range(1..=3), 0.9, rng.random_range(0.5..5.0));
        let (m, p) = random_model(rng, s);
        let mu = random_policy(rng, &m, 0.05);
        let tol = 1e-9;
        match (
            soft_policy_value(&m, &p, &mu, 1e-12),
            brute_force_value(&m, &p, &mu, 400, tol),
        ) {
            (Ok(v), Ok(bf)) => {
                let d = max_abs_diff(&v, &bf);
                out.case(d <= tol, || {
                    format!("linear solve and path oracle differ by {d:e}")
                });
            }
            (Err(e), _) => out.error(e),
            (_, Err(e)) => out.error(e),
        }
    }
    out
}

/// `|a − b| ≤ 1e-5·max(|b|, 1)`.
fn close_rel(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-5 * b.abs().max(1.0)
}

fn objective(m: &ModelSpec, p: &ParameterVector) -> Result<f64, String> {
    let fp = solve_fixed_point(
        m,
        p,
        None,
        FixedPointOptions {
            tol: 1e-13,
            max_iter: 500_000,
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(dot(m.weights(), &fp.tables.vstar))
}

fn finite_differences(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES.min(4) {
        let s = shape(rng, n);
        let (m, p) = random_model(rng, s);
        let analytic = solve_fixed_point(&m, &p, None, FP)
            .map_err(|e| e.to_string())
            .and_then(|fp| {
                assemble_stacks(&m, &p, &gibbs_policy(&fp.tables, &m)).map_err(|e| e.to_string())
            });
        let stacks = match analytic {
            Ok((_, st)) => st.full(),
            Err(e) => {
                out.error(e);
                continue;
            }
        };
        let h = 1e-5;
        for (flat, &g) in stacks.iter().enumerate() {
            let coord = m.layout().coord(flat);
            match (
                objective(&m, &p.shifted(coord, h)),
                objective(&m, &p.shifted(coord, -h)),
            ) {
                (Ok(a), Ok(b)) => {
                    let fd = (a - b) / (2.0 * h);
                    out.case(close_rel(g, fd), || {
                        format!("{coord:?}: analytic {g} vs difference {fd}")
                    });
                }
                (Err(e), _) | (_, Err(e)) => out.error(e),
            }
        }
    }
    out
}

fn linearity(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    use crate::model::{CostFunction, SquaredEuclideanCost, SumCost};
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let s = shape(rng, n);
        let (m, p) = random_model(rng, s);
        let c1 = m.cost().clone();
        let c2: Arc<dyn CostFunction> = Arc::new(SquaredEuclideanCost {
            weight: rng.random_range(0.1..2.0),
        });
        let sum = m.with_cost(Arc::new(SumCost {
            terms: vec![c1.clone(), c2.clone()],
        }));
        let mu = match solve_fixed_point(&sum, &p, None, FP) {
            Ok(fp) => gibbs_policy(&fp.tables, &sum),
            Err(e) => {
                out.error(e);
                continue;
            }
        };
        let g = |model: &ModelSpec| assemble_stacks(model, &p, &mu).map(|(_, s)| s.full());
        match (g(&sum), g(&m.with_cost(c1)), g(&m.with_cost(c2))) {
            (Ok(a), Ok(b), Ok(c)) => {
                let bc: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x + y).collect();
                let d = max_abs_diff(&a, &bc);
                out.case(d <= 1e-9 * (1.0 + norm2(&a)), || {
                    format!("sum of gradients off by {d:e}")
                });
            }
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => out.error(e),
        }
    }
    out
}

fn derivative_identity(rng: &mut ChaCha8Rng, n: usize, law: ControlLaw) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..200 {
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let alpha = rng.random_range(-50.0..50.0);
        let k0 = rng.random_range(0.01..10.0);
        let cfg = ControlConfig {
            k0,
            zero_threshold: 0.0,
            ..ControlConfig::default()
        };
        let q = dot(&f, &f);
        if q == 0.0 {
            continue;
        }
        let u = law(&f, alpha, &cfg);
        let lhs = alpha + dot(&f, &u);
        let rhs = -k0 * q - alpha.hypot(q);
        out.case(
            (lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) && rhs <= 0.0,
            || format!("F={f:?} α={alpha} K0={k0}: α + Fᵀu = {lhs}, expected {rhs}"),
        );
    }
    out
}

fn lipschitz_bound(rng: &mut ChaCha8Rng, n: usize, law: ControlLaw) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..200 {
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let alpha = -rng.random_range(0.0..50.0);
        let k0 = rng.random_range(0.01..10.0);
        let cfg = ControlConfig {
            k0,
            zero_threshold: 0.0,
            ..ControlConfig::default()
        };
        let u = law(&f, alpha, &cfg);
        let (nu, nf) = (norm2(&u), norm2(&f));
        out.case(nu <= (1.0 + k0) * nf * (1.0 + 1e-14), || {
            format!(
                "F={f:?} α={alpha} K0={k0}: ‖u‖={nu} > (1+K0)‖F‖={}",
                (1.0 + k0) * nf
            )
        });
    }
    out
}

fn scenario_for(rng: &mut ChaCha8Rng, n: usize) -> Option<UavScenario> {
    if n < 3 {
        return None;
    }
    let uavs = if n >= 6 { 2 } else { 1 };
    Some(UavScenario::random(
        n - 1 - uavs,
        uavs,
        2,
        20.0,
        rng.random_range(0.5..3.0),
        rng.random(),
    ))
}

fn lyapunov_consistency(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    use crate::controller::{ControlState, StaticDynamics};
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let s = shape(rng, n);
        let (m, p) = random_model(rng, s);
        let cfg = ControlConfig::default();
        match ControlState::initialize(&m, p.clone(), None, &StaticDynamics, 0.0, &cfg) {
            Ok(st) => {
                let direct: f64 = dot(m.weights(), &st.tables.vstar);
                let fresh = objective(&m, &p);
                out.case(
                    (st.lyapunov - direct).abs() <= 1e-10
                        && fresh.is_ok_and(|v| (v - st.lyapunov).abs() <= 1e-9),
                    || format!("𝒱 = {} but Σ w V* = {direct}", st.lyapunov),
                );
            }
            Err(e) => out.error(e),
        }
    }
    out
}

fn scenario_relabeling(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let Some(sc) = scenario_for(rng, n) else {
            break;
        };
        let mut swapped = sc.clone();
        swapped.uavs.reverse();
        let solve = |sc: &UavScenario| -> Result<Vec<f64>, String> {
            let (m, p, _) = build_model(sc).map_err(|e| e.to_string())?;
            if !validate_model(&m, &p).passed() {
                return Err("built scenario failed validation".into());
            }
            let mut v = solve_fixed_point(&m, &p, None, FP)
                .map_err(|e| e.to_string())?
                .tables
                .vstar;
            v.sort_by(f64::total_cmp);
            Ok(v)
        };
        match (solve(&sc), solve(&swapped)) {
            (Ok(a), Ok(b)) => {
                let d = max_abs_diff(&a, &b);
                out.case(d <= 1e-8 * (1.0 + norm2(&a)), || {
                    format!("sorted V* differ by {d:e}")
                });
            }
            (Err(e), _) | (_, Err(e)) => out.error(e),
        }
    }
    out
}

fn routes_reach_terminal(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    for _ in 0..CASES {
        let Some(sc) = scenario_for(rng, n) else {
            break;
        };
        let res = build_model(&sc)
            .map_err(|e| e.to_string())
            .and_then(|(m, p, _)| {
                let fp = solve_fixed_point(&m, &p, None, FP).map_err(|e| e.to_string())?;
                let mu = gibbs_policy(&fp.tables, &m);
                Ok(greedy_routes(
                    &m,
                    &mu,
                    &(0..m.n_states()).collect::<Vec<_>>(),
                ))
            });
        match res {
            Ok(routes) => {
                let bad = routes
                    .iter()
                    .find(|r| !r.reaches_terminal || r.hops.len() > n);
                out.case(bad.is_none(), || {
                    format!("route {bad:?} does not reach the base")
                });
            }
            Err(e) => out.error(e),
        }
    }
    out
}

fn trajectory_round_trip(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut out = Outcome::default();
    let records: Vec<TrajectoryRecord> = (0..CASES)
        .map(|k| TrajectoryRecord {
            t: k as f64 * 0.1,
            params: (0..n).map(|_| rng.random_range(-1e3..1e3)).collect(),
            lyapunov: rng.random_range(-1e6..1e6),
            f_norm: rng.random(),
            u_norm: rng.random(),
            alpha: rng.random_range(-1.0..1.0),
            routes: Vec::new(),
            step_time: None,
        })
        .collect();
    let mut buf = Vec::new();
    match write_jsonl(&mut buf, &records)
        .and_then(|_| parse_jsonl::<TrajectoryRecord, _>(buf.as_slice()))
    {
        Ok(back) => out.case(back == records, || {
            "parsed records differ from the written ones".into()
        }),
        Err(e) => out.error(e),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = verify_suite(0, &[4, 6]);
        let failures: Vec<_> = report.failures().collect();
        assert!(failures.is_empty(), "{failures:#?}");
        assert_eq!(report.results.len(), 30);
    }

    #[test]
    fn empty_sizes_give_an_empty_passing_report() {
        let report = verify_suite(0, &[0]);
        assert!(report.results.is_empty() && report.passed());
        assert!(verify_suite(0, &[]).passed());
    }

    #[test]
    fn sign_error_in_the_law_is_caught() {
        fn flipped(f: &[f64], alpha: f64, cfg: &ControlConfig) -> Vec<f64> {
            control_law(f, alpha, cfg).into_iter().map(|x| -x).collect()
        }
        let report = verify_suite_with(1, &[3], flipped);
        let r = report
            .results
            .iter()
            .find(|r| r.property == "controller.derivative_identity")
            .unwrap();
        assert!(!r.passed);
        assert!(r.counterexample.as_ref().unwrap().contains("α + Fᵀu"));
    }
}
