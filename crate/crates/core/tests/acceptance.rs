//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero if any fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parasdm::controller::{control_law, taylor_update, ControlConfig, RefreshMode};
use parasdm::harness::random::{random_lambda, random_model, random_policy, RandomModelShape};
use parasdm::harness::simulate::simulate_to_path;
use parasdm::harness::{
    run_baseline, run_simulation, RunConfig, SimulationOptions, TrajectoryRecord,
};
use parasdm::model::{ModelSpec, ParameterVector};
use parasdm::scenario::{build_model, MotionKind, MotionSpec, UavScenario};
use parasdm::sensitivity::value_gradients;
use parasdm::soft_solver::{
    anneal, gibbs_policy, soft_bellman_operator, solve_fixed_point, AnnealSchedule,
    FixedPointOptions, SoftPolicy,
};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Soft Bellman map written out from the definition, for cross-checking.
fn oracle_bellman(model: &ModelSpec, params: &ParameterVector, lambda: &[f64]) -> Vec<f64> {
    let temp = model.gamma() / model.beta();
    let mut v = vec![0.0; model.n_states()];
    for s in 0..model.n_states() {
        if s == model.terminal() {
            continue;
        }
        let z: f64 = model.pairs(s).map(|p| (-lambda[p] / temp).exp()).sum();
        v[s] = -temp * z.ln();
    }
    let mut out = vec![0.0; lambda.len()];
    for s in 0..model.n_states() {
        if s == model.terminal() {
            continue;
        }
        for pair in model.pairs(s) {
            let a = model.pair_action(pair);
            out[pair] = model
                .transitions(pair)
                .iter()
                .map(|t| {
                    let c = model.cost().cost(s, a, t.next, params);
                    t.prob * (c + temp * t.prob.ln() + model.gamma() * v[t.next])
                })
                .sum();
        }
    }
    out
}

/// Value of `μ` from a dense solve of `(I − γP_μ)V = b` with `V(δ) = 0`.
fn oracle_policy_value(model: &ModelSpec, params: &ParameterVector, mu: &SoftPolicy) -> Vec<f64> {
    let n = model.n_states();
    let temp = model.gamma() / model.beta();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if s == model.terminal() {
            continue;
        }
        for (k, pair) in model.pairs(s).enumerate() {
            let act = model.pair_action(pair);
            let m = mu.row(model, s)[k];
            for t in model.transitions(pair) {
                let c = model.cost().cost(s, act, t.next, params);
                b[s] += m * t.prob * (c + temp * t.prob.ln() + temp * m.ln());
                if t.next != model.terminal() {
                    a[(s, t.next)] -= model.gamma() * m * t.prob;
                }
            }
        }
    }
    let x = a.lu().solve(&b).expect("proper policy");
    x.iter().copied().collect()
}

fn ac1() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let gammas = [0.5, 0.9, 1.0];
    let (mut ok, mut oracle_dev) = (0, 0.0f64);
    for i in 0..100 {
        let shape = RandomModelShape::new(
            rng.random_range(2..=8),
            rng.random_range(1..=4),
            gammas[i % 3],
            rng.random_range(0.5..5.0),
        );
        let (m, p) = random_model(&mut rng, shape);
        let l1 = random_lambda(&mut rng, &m, 5.0);
        let l2 = random_lambda(&mut rng, &m, 5.0);
        let t1 = soft_bellman_operator(&l1, &m, &p).unwrap();
        let t2 = soft_bellman_operator(&l2, &m, &p).unwrap();
        oracle_dev = oracle_dev.max(max_abs_diff(&t1, &oracle_bellman(&m, &p, &l1)));
        if max_abs_diff(&t1, &t2) <= m.gamma() * max_abs_diff(&l1, &l2) + 1e-12 {
            ok += 1;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        ok == 100 && secs < 5.0 && oracle_dev < 1e-9,
        format!("contraction held on {ok}/100 pairs, operator vs oracle {oracle_dev:.1e}, {secs:.2} s (< 5 s)"),
    )
}

fn ac2() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let gammas = [0.5, 0.9, 1.0];
    let (mut checked, mut worst, mut oracle_dev) = (0usize, f64::NEG_INFINITY, 0.0f64);
    for i in 0..10 {
        let shape = RandomModelShape::new(
            rng.random_range(3..=8),
            rng.random_range(1..=4),
            gammas[i % 3],
            rng.random_range(0.5..5.0),
        );
        let (m, p) = random_model(&mut rng, shape);
        let fp = solve_fixed_point(
            &m,
            &p,
            None,
            FixedPointOptions {
                tol: 1e-12,
                max_iter: 1_000_000,
            },
        )
        .unwrap();
        let gibbs = gibbs_policy(&fp.tables, &m);
        oracle_dev = oracle_dev.max(max_abs_diff(
            &oracle_policy_value(&m, &p, &gibbs),
            &fp.tables.vstar,
        ));
        for _ in 0..200 {
            let mu = random_policy(&mut rng, &m, 1e-3);
            let v = oracle_policy_value(&m, &p, &mu);
            for s in 0..m.n_states() {
                worst = worst.max(fp.tables.vstar[s] - v[s]);
                checked += 1;
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-9 && oracle_dev <= 1e-8 && secs < 30.0,
        format!("max V* − V^μ = {worst:.2e} over {checked} state checks (slack 1e-9), Gibbs value vs V* {oracle_dev:.1e}, {secs:.2} s (< 30 s)"),
    )
}

fn small_scenario(rng: &mut ChaCha8Rng) -> UavScenario {
    let users = rng.random_range(2..=5);
    let uavs = rng.random_range(1..=2);
    UavScenario::random(
        users,
        uavs,
        2,
        20.0,
        rng.random_range(0.5..2.0),
        rng.random(),
    )
}

fn ac3() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let opts = FixedPointOptions {
        tol: 1e-13,
        max_iter: 1_000_000,
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for k in 0..20 {
        let (m, p, _) = build_model(&small_scenario(&mut rng)).unwrap();
        let run = || -> Result<f64, String> {
            let fp = solve_fixed_point(&m, &p, None, opts).map_err(|e| e.to_string())?;
            let mu = gibbs_policy(&fp.tables, &m);
            let grads = value_gradients(&m, &p, &mu, 1e-13).map_err(|e| e.to_string())?;
            let mut analytic = Vec::new();
            let mut fd = Vec::new();
            for flat in 0..m.layout().len() {
                analytic.push(grads.coord(flat).iter().sum::<f64>());
                let c = m.layout().coord(flat);
                let total = |q: &ParameterVector| -> Result<f64, String> {
                    let t = solve_fixed_point(&m, q, Some(&fp.tables.lambda), opts)
                        .map_err(|e| e.to_string())?;
                    Ok(t.tables.vstar.iter().sum())
                };
                fd.push((total(&p.shifted(c, h))? - total(&p.shifted(c, -h))?) / (2.0 * h));
            }
            let scale = fd.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            Ok(max_abs_diff(&analytic, &fd) / scale.max(f64::MIN_POSITIVE))
        };
        match run() {
            Ok(e) => worst = worst.max(e),
            Err(e) => failures.push(format!("model {k}: {e}")),
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        failures.is_empty() && worst < 1e-5 && secs < 60.0,
        format!(
            "max relative error {worst:.2e} (< 1e-5) on 20 scenario models, {secs:.2} s (< 60 s){}",
            errors_suffix(&failures)
        ),
    )
}

fn errors_suffix(failures: &[String]) -> String {
    if failures.is_empty() {
        String::new()
    } else {
        format!("; errors: {}", failures.join("; "))
    }
}

fn ac4() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut worst_identity, mut worst_bound) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let dim = rng.random_range(1..=12);
        let f: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let alpha = rng.random_range(-100.0..100.0);
        let k0 = rng.random_range(0.01..10.0);
        let cfg = ControlConfig {
            k0,
            zero_threshold: 0.0,
            ..ControlConfig::default()
        };
        let u = control_law(&f, alpha, &cfg);
        let q: f64 = f.iter().map(|x| x * x).sum();
        let lhs = alpha + f.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let rhs = -k0 * q - (alpha * alpha + q * q).sqrt();
        worst_identity = worst_identity.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
        let neg = control_law(&f, -alpha.abs(), &cfg);
        worst_bound = worst_bound.max(norm2(&neg) - (1.0 + k0) * q.sqrt() * (1.0 + 1e-12));
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        worst_identity <= 1e-12 && worst_bound <= 0.0 && secs < 1.0,
        format!(
            "identity residual {worst_identity:.1e} relative (≤ 1e-12) on 1e4 triples, max ‖u‖ − (1+K0)‖F‖ = {worst_bound:.2e} (≤ 0), {secs:.3} s (< 1 s)"
        ),
    )
}

fn moving_scenario(n_users: usize, n_uavs: usize, seed: u64, motion: MotionSpec) -> UavScenario {
    let mut sc = UavScenario::random(n_users, n_uavs, 2, 20.0, 2.0, seed);
    sc.motion = motion;
    sc
}

fn collect(
    cfg: &RunConfig,
    opts: SimulationOptions,
) -> Result<(Vec<TrajectoryRecord>, parasdm::harness::SimulationSummary), String> {
    let mut records = Vec::new();
    let summary = run_simulation(cfg, opts, &mut |r| {
        records.push(r.clone());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok((records, summary))
}

fn ac5() -> Verdict {
    let clock = Instant::now();
    let motion = MotionSpec {
        kind: MotionKind::Sinusoidal {
            amplitude: vec![1.0, 0.5],
            frequency: 0.1,
            phase: 0.0,
            phase_step: 0.7,
        },
        stop_at: Some(5.0),
        move_base: false,
    };
    let mut cfg = RunConfig::from_scenario(moving_scenario(10, 3, 5, motion));
    cfg.dt = 0.01;
    cfg.t_end = 20.0;
    cfg.k0 = 1.0;
    cfg.mode = RefreshMode::Exact;
    let (records, _) = match collect(&cfg, SimulationOptions::default()) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("simulation failed: {e}")),
    };
    let secs = clock.elapsed().as_secs_f64();
    let last = records.last().unwrap();
    let after: Vec<&TrajectoryRecord> = records.iter().filter(|r| r.t >= 5.0 - 1e-9).collect();
    let rise = after
        .windows(2)
        .map(|w| w[1].lyapunov - w[0].lyapunov)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        (last.t - 20.0).abs() < 1e-9 && last.f_norm <= 1e-3 && rise <= 1e-9 && secs < 120.0,
        format!(
            "‖F(20)‖ = {:.2e} (≤ 1e-3), largest 𝒱 increase after t = 5 is {rise:.2e} (≤ 1e-9), {secs:.1} s (< 120 s)",
            last.f_norm
        ),
    )
}

fn ac6() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let opts = FixedPointOptions {
        tol: 1e-14,
        max_iter: 1_000_000,
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut failures = Vec::new();
    for k in 0..10 {
        let (m, p, _) = build_model(&small_scenario(&mut rng)).unwrap();
        let run = |rng: &mut ChaCha8Rng| -> Result<f64, String> {
            let fp = solve_fixed_point(&m, &p, None, opts).map_err(|e| e.to_string())?;
            let mu = gibbs_policy(&fp.tables, &m);
            let grads = value_gradients(&m, &p, &mu, 1e-14).map_err(|e| e.to_string())?;
            let dir: Vec<f64> = (0..m.layout().len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let len = norm2(&dir);
            let err = |r: f64| -> Result<f64, String> {
                let delta: Vec<f64> = dir.iter().map(|d| d * r / len).collect();
                let mut q = p.clone();
                q.add_flat(1.0, &delta);
                let exact = solve_fixed_point(&m, &q, Some(&fp.tables.lambda), opts)
                    .map_err(|e| e.to_string())?;
                Ok(max_abs_diff(
                    &taylor_update(&fp.tables.vstar, &grads, &delta),
                    &exact.tables.vstar,
                ))
            };
            Ok(err(1e-3)? / err(5e-4)?)
        };
        match run(&mut rng) {
            Ok(ratio) => {
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            Err(e) => failures.push(format!("model {k}: {e}")),
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        failures.is_empty() && lo >= 3.5 && hi <= 4.5 && secs < 30.0,
        format!("remainder ratios in [{lo:.3}, {hi:.3}] (within [3.5, 4.5]) on 10 scenario models, {secs:.2} s (< 30 s){}", errors_suffix(&failures)),
    )
}

/// Hard-routing objective of one relay: each user takes the cheaper of the
/// direct hop and the relayed path.
fn hard_objective(users: &[[f64; 2]], z: [f64; 2], y: [f64; 2]) -> f64 {
    let d = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    users.iter().map(|&x| d(x, z).min(d(x, y) + d(y, z))).sum()
}

/// Minimizes the hard objective over successively refined grids.
fn grid_search(users: &[[f64; 2]], z: [f64; 2], center: [f64; 2], half: f64) -> [f64; 2] {
    let (mut c, mut h) = (center, half);
    for _ in 0..12 {
        let mut best = (f64::INFINITY, c);
        for i in 0..=40 {
            for j in 0..=40 {
                let y = [
                    c[0] - h + 2.0 * h * i as f64 / 40.0,
                    c[1] - h + 2.0 * h * j as f64 / 40.0,
                ];
                let v = hard_objective(users, z, y);
                if v < best.0 {
                    best = (v, y);
                }
            }
        }
        c = best.1;
        h /= 4.0;
    }
    c
}

fn ac7() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let z = [0.0, 0.0];
    let users: Vec<[f64; 2]> = (0..6)
        .map(|_| {
            [
                10.0 + rng.random_range(-2.0..2.0),
                3.0 + rng.random_range(-2.0..2.0),
            ]
        })
        .collect();
    let sc = UavScenario {
        users: users.iter().map(|u| u.to_vec()).collect(),
        uavs: vec![vec![-3.0, 4.0]],
        base: z.to_vec(),
        motion: MotionSpec::default(),
        seed: 0,
        gamma: 1.0,
        beta: 100.0,
    };
    let (m, p, _) = build_model(&sc).unwrap();
    let schedule = AnnealSchedule {
        beta_max: 100.0,
        ..AnnealSchedule::default()
    };
    let out = match anneal(&m, &p, &schedule) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("anneal failed: {e}")),
    };
    let y = out.params.zeta(m.n_states() - 2);
    let n = users.len() as f64;
    let closed = [
        (users.iter().map(|u| u[0]).sum::<f64>() + n * z[0]) / (2.0 * n),
        (users.iter().map(|u| u[1]).sum::<f64>() + n * z[1]) / (2.0 * n),
    ];
    let grid = grid_search(&users, z, [0.0, 0.0], 20.0);
    let err = (y[0] - grid[0]).hypot(y[1] - grid[1]);
    let oracle_gap = (closed[0] - grid[0]).hypot(closed[1] - grid[1]);
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        err <= 1e-3 && oracle_gap <= 1e-3 && secs < 10.0,
        format!(
            "annealed y = ({:.5}, {:.5}), grid oracle ({:.5}, {:.5}), distance {err:.1e} (≤ 1e-3); closed form off grid by {oracle_gap:.1e}; {secs:.2} s (< 10 s)",
            y[0], y[1], grid[0], grid[1]
        ),
    )
}

fn ac8() -> Verdict {
    let motion = MotionSpec {
        kind: MotionKind::SeededRandomSmooth {
            amplitude: 1.0,
            max_frequency: 0.2,
            terms: 3,
        },
        stop_at: None,
        move_base: false,
    };
    let mut cfg = RunConfig::from_scenario(moving_scenario(20, 5, 8, motion));
    cfg.dt = 0.01;
    cfg.t_end = 3.0;
    cfg.mode = RefreshMode::Taylor;
    cfg.resolve_every = Some(0.1);
    cfg.seed = 2;
    let summary = match collect(&cfg, SimulationOptions { timing: true }) {
        Ok((_, s)) => s,
        Err(e) => return verdict(false, format!("simulation failed: {e}")),
    };
    let base = match run_baseline(&cfg, &mut |_| Ok(())) {
        Ok(b) => b,
        Err(e) => return verdict(false, format!("baseline failed: {e}")),
    };
    let time_ratio = base.mean_resolve_seconds / summary.mean_step_seconds;
    let jump_ratio = base.max_jump / summary.max_step_displacement;
    verdict(
        time_ratio >= 10.0 && jump_ratio >= 10.0,
        format!(
            "baseline {:.3e} s per resolve vs taylor {:.3e} s per step, ratio {time_ratio:.0} (≥ 10); largest baseline jump {:.3} vs controller step {:.3}, ratio {jump_ratio:.1} (≥ 10)",
            base.mean_resolve_seconds, summary.mean_step_seconds, base.max_jump, summary.max_step_displacement
        ),
    )
}

fn ac9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let motion = MotionSpec {
        kind: MotionKind::SeededRandomSmooth {
            amplitude: 1.0,
            max_frequency: 0.2,
            terms: 3,
        },
        stop_at: None,
        move_base: false,
    };
    let mut cfg = RunConfig::from_scenario(moving_scenario(8, 2, 9, motion));
    cfg.t_end = 1.0;
    cfg.seed = 4;
    let mut files = Vec::new();
    for (i, csv) in [(0, false), (1, false), (2, true), (3, true)] {
        let path = dir.path().join(format!("run{i}"));
        if let Err(e) = simulate_to_path(&cfg, &path, csv, SimulationOptions::default()) {
            return verdict(false, format!("simulation failed: {e}"));
        }
        files.push(std::fs::read(&path).unwrap());
    }
    let same = files[0] == files[1] && files[2] == files[3] && !files[0].is_empty();
    verdict(
        same,
        format!(
            "two JSONL runs and two CSV runs byte-identical: {same} ({} bytes)",
            files[0].len()
        ),
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Verdict); 9] = [
        ("AC1", "contraction", ac1),
        ("AC2", "gibbs optimality", ac2),
        ("AC3", "gradient correctness", ac3),
        ("AC4", "control identity", ac4),
        ("AC5", "asymptotic tracking", ac5),
        ("AC6", "taylor remainder", ac6),
        ("AC7", "closed-form stationarity", ac7),
        ("AC8", "baseline contrast", ac8),
        ("AC9", "determinism", ac9),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let v = check();
        println!(
            "{id} {} {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
