//! Frame-by-frame re-optimization baseline.
//!
//! At every resolve time the static problem is annealed from scratch: the
//! manipulable block restarts from its initial value plus a seeded Gaussian
//! perturbation, while the prescribed block follows the same Euler-integrated
//! motion as the controller. Consecutive solutions may land in different
//! local optima, which shows up as large parameter jumps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::routes::{greedy_routes, Route};
use super::simulate::step_count;
use super::trajectory::write_jsonl_record;
use super::HarnessError;
use crate::numeric::norm2;
use crate::soft_solver::anneal;

/// Restart perturbation as a fraction of the initial scene extent.
pub const RESTART_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub t: f64,
    pub params: Vec<f64>,
    pub lyapunov: f64,
    pub f_norm: f64,
    /// `‖ζ₂, η₂‖` change since the previous resolve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump: Option<f64>,
    pub resolve_seconds: f64,
    pub routes: Vec<Route>,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub resolves: usize,
    pub mean_resolve_seconds: f64,
    pub max_jump: f64,
    pub lyapunov_initial: f64,
}

pub fn run_baseline(
    cfg: &RunConfig,
    sink: &mut dyn FnMut(&BaselineRecord) -> Result<(), HarnessError>,
) -> Result<BaselineSummary, HarnessError> {
    let problem = cfg.problem()?;
    let schedule = cfg.schedule(&problem);
    let period = cfg.resolve_every.unwrap_or(cfg.dt);
    let every = ((period / cfg.dt).round() as usize).max(1);
    let steps = step_count(cfg.t_end, cfg.dt);
    let sigma = RESTART_SCALE * problem.params.state_extent();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_manip = problem.params.manipulable();

    let mut params = problem.params.clone();
    let mut prev: Option<Vec<f64>> = None;
    let mut total = 0.0;
    let mut resolves = 0;
    let mut max_jump = 0.0f64;
    let mut lyapunov_initial = f64::NAN;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if k > 0 {
            let kappa = problem.dynamics.velocity(&params, t - cfg.dt);
            params.add_prescribed(cfg.dt, &kappa);
        }
        if k % every != 0 {
            continue;
        }
        let mut startp = params.clone();
        let delta: Vec<f64> = startp
            .manipulable()
            .iter()
            .zip(&initial_manip)
            .map(|(a, b)| b - a)
            .collect();
        startp.add_manipulable(1.0, &delta);
        if resolves > 0 && sigma > 0.0 {
            let kick: Vec<f64> = (0..initial_manip.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect();
            startp.add_manipulable(1.0, &kick);
        }
        let mut sched = schedule.clone();
        sched.seed = schedule.seed.wrapping_add(resolves as u64);
        let clock = Instant::now();
        let out = anneal(&problem.model, &startp, &sched)?;
        let secs = clock.elapsed().as_secs_f64();
        total += secs;

        let manip = out.params.manipulable();
        let jump = prev.as_ref().map(|p| {
            let d: Vec<f64> = manip.iter().zip(p).map(|(a, b)| a - b).collect();
            norm2(&d)
        });
        if let Some(j) = jump {
            max_jump = max_jump.max(j);
        }
        if resolves == 0 {
            lyapunov_initial = out.objective;
        }
        let rec = BaselineRecord {
            t,
            params: out.params.flatten(),
            lyapunov: out.objective,
            f_norm: out.stacks.f_norm(),
            jump,
            resolve_seconds: secs,
            routes: greedy_routes(&out.model, &out.policy, &problem.sources),
            warnings: out.warnings.len(),
        };
        sink(&rec)?;
        prev = Some(manip);
        resolves += 1;
    }
    Ok(BaselineSummary {
        resolves,
        mean_resolve_seconds: total / resolves.max(1) as f64,
        max_jump,
        lyapunov_initial,
    })
}

pub fn baseline_to_path(cfg: &RunConfig, path: &Path) -> Result<BaselineSummary, HarnessError> {
    let file =
        File::create(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let res = run_baseline(cfg, &mut |r| write_jsonl_record(&mut w, r));
    w.flush()?;
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::simulate::{run_simulation, SimulationOptions};
    use crate::scenario::UavScenario;

    #[test]
    fn static_scene_resolves_are_stationary_and_match_the_controller_start() {
        let sc = UavScenario {
            users: vec![vec![3.0, 0.0], vec![-2.0, 1.0], vec![0.0, -3.0]],
            uavs: vec![vec![0.5, 0.2]],
            base: vec![0.0, 0.0],
            motion: Default::default(),
            seed: 3,
            gamma: 1.0,
            beta: 10.0,
        };
        let cfg = RunConfig {
            dt: 0.5,
            t_end: 1.0,
            ..RunConfig::from_scenario(sc)
        };
        let mut recs = Vec::new();
        let s = run_baseline(&cfg, &mut |r| {
            recs.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(s.resolves, 3);
        assert!(recs.iter().all(|r| r.f_norm <= 1e-5));
        let mut first = None;
        run_simulation(&cfg, SimulationOptions::default(), &mut |r| {
            first.get_or_insert(r.lyapunov);
            Ok(())
        })
        .unwrap();
        assert!((first.unwrap() - s.lyapunov_initial).abs() <= 1e-8);
    }
}
