//! Closed-loop simulation runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Problem, RunConfig};
use super::routes::greedy_routes;
use super::trajectory::{write_jsonl_record, CsvTrajectoryWriter, TrajectoryRecord};
use super::HarnessError;
use crate::controller::{step, ControlConfig, ControlState};
use crate::model::{ModelSpec, ParameterVector};
use crate::numeric::norm2;
use crate::soft_solver::anneal;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimulationOptions {
    /// Store per-step wall time in the records. Off by default so that
    /// repeated runs produce identical files.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub steps: usize,
    pub t_final: f64,
    pub f_norm_final: f64,
    pub lyapunov_initial: f64,
    pub lyapunov_final: f64,
    pub lyapunov_change: f64,
    /// Largest `‖dt·u‖₂` over the run.
    pub max_step_displacement: f64,
    pub mean_step_seconds: f64,
    pub anneal_seconds: f64,
    pub warnings: Vec<String>,
}

/// Operating model and starting point of a run: the model at the schedule's
/// `β_max`, with the manipulable block annealed if requested.
pub struct Start {
    pub model: ModelSpec,
    pub params: ParameterVector,
    pub lambda: Option<Vec<f64>>,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

pub fn prepare_start(cfg: &RunConfig, problem: &Problem) -> Result<Start, HarnessError> {
    let schedule = cfg.schedule(problem);
    let clock = Instant::now();
    if !cfg.anneal_start {
        return Ok(Start {
            model: problem.model.with_beta(schedule.beta_max),
            params: problem.params.clone(),
            lambda: None,
            warnings: Vec::new(),
            seconds: 0.0,
        });
    }
    let out = anneal(&problem.model, &problem.params, &schedule)?;
    Ok(Start {
        model: out.model,
        params: out.params,
        lambda: Some(out.tables.lambda),
        warnings: out.warnings,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

pub(crate) fn record(
    state: &ControlState,
    model: &ModelSpec,
    sources: &[usize],
    step_time: Option<f64>,
) -> TrajectoryRecord {
    TrajectoryRecord {
        t: state.t,
        params: state.params.flatten(),
        lyapunov: state.lyapunov,
        f_norm: state.stacks.f_norm(),
        u_norm: norm2(&state.u),
        alpha: state.alpha,
        routes: greedy_routes(model, &state.policy, sources),
        step_time,
    }
}

/// Number of Euler steps covering `[0, t_end]`.
pub(crate) fn step_count(t_end: f64, dt: f64) -> usize {
    (t_end / dt + 1e-9).floor() as usize
}

/// Runs the controller from the (annealed) start, handing every record to
/// `sink` as soon as it is produced.
pub fn run_simulation(
    cfg: &RunConfig,
    opts: SimulationOptions,
    sink: &mut dyn FnMut(&TrajectoryRecord) -> Result<(), HarnessError>,
) -> Result<SimulationSummary, HarnessError> {
    let problem = cfg.problem()?;
    let start = prepare_start(cfg, &problem)?;
    let control = cfg.control(&problem);
    simulate_from(&problem, start, &control, cfg.t_end, opts, sink)
}

pub(crate) fn simulate_from(
    problem: &Problem,
    start: Start,
    control: &ControlConfig,
    t_end: f64,
    opts: SimulationOptions,
    sink: &mut dyn FnMut(&TrajectoryRecord) -> Result<(), HarnessError>,
) -> Result<SimulationSummary, HarnessError> {
    let model = &start.model;
    let dynamics = problem.dynamics.as_ref();
    let mut state = ControlState::initialize(
        model,
        start.params,
        start.lambda.as_deref(),
        dynamics,
        0.0,
        control,
    )?;
    sink(&record(
        &state,
        model,
        &problem.sources,
        opts.timing.then_some(0.0),
    ))?;
    let lyapunov_initial = state.lyapunov;
    let steps = step_count(t_end, control.dt);
    let mut max_disp = 0.0f64;
    let mut total = 0.0;
    for k in 1..=steps {
        let clock = Instant::now();
        let mut next = step(&state, model, dynamics, control)?;
        let secs = clock.elapsed().as_secs_f64();
        total += secs;
        next.t = k as f64 * control.dt;
        max_disp = max_disp.max(control.dt * norm2(&next.u));
        sink(&record(
            &next,
            model,
            &problem.sources,
            opts.timing.then_some(secs),
        ))?;
        state = next;
    }
    Ok(SimulationSummary {
        steps,
        t_final: state.t,
        f_norm_final: state.stacks.f_norm(),
        lyapunov_initial,
        lyapunov_final: state.lyapunov,
        lyapunov_change: state.lyapunov - lyapunov_initial,
        max_step_displacement: max_disp,
        mean_step_seconds: if steps > 0 { total / steps as f64 } else { 0.0 },
        anneal_seconds: start.seconds,
        warnings: start.warnings,
    })
}

/// Runs a simulation and writes the trajectory to `path`, as line-delimited
/// JSON or as CSV. The file is flushed even when a step fails.
pub fn simulate_to_path(
    cfg: &RunConfig,
    path: &Path,
    csv: bool,
    opts: SimulationOptions,
) -> Result<SimulationSummary, HarnessError> {
    let file =
        File::create(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    if csv {
        let mut w = CsvTrajectoryWriter::new(BufWriter::new(file));
        let res = run_simulation(cfg, opts, &mut |r| w.write(r));
        w.flush()?;
        res
    } else {
        let mut w = BufWriter::new(file);
        let res = run_simulation(cfg, opts, &mut |r| write_jsonl_record(&mut w, r));
        w.flush()?;
        res
    }
}
