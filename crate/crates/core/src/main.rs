use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use parasdm::controller::RefreshMode;
use parasdm::harness::baseline::baseline_to_path;
use parasdm::harness::routes::greedy_routes;
use parasdm::harness::simulate::simulate_to_path;
use parasdm::harness::{verify_suite, RunConfig, SimulationOptions};
use parasdm::model::io::ParamsDocument;
use parasdm::soft_solver::anneal;

#[derive(Parser)]
#[command(
    name = "parasdm",
    version,
    about = "Solve and track parameterized sequential decision problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anneal the start, then run the tracking controller.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        k0: Option<f64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<RefreshMode>,
        /// Write CSV instead of line-delimited JSON.
        #[arg(long)]
        csv: bool,
        /// Record per-step wall time (makes the output non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Solve the static problem by deterministic annealing.
    Anneal {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beta_min: Option<f64>,
        #[arg(long)]
        beta_max: Option<f64>,
        #[arg(long)]
        growth: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-anneal from scratch at a fixed period.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resolve_every: Option<f64>,
    },
    /// Run the randomized property suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// State counts of the random instances.
        #[arg(long, num_args = 0.., default_values_t = [3usize, 5, 8])]
        sizes: Vec<usize>,
    },
}

fn parse_mode(s: &str) -> Result<RefreshMode, String> {
    match s {
        "exact" => Ok(RefreshMode::Exact),
        "taylor" => Ok(RefreshMode::Taylor),
        _ => Err(format!("unknown mode `{s}` (expected exact or taylor)")),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            dt,
            t_end,
            k0,
            mode,
            csv,
            timing,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.dt = dt.unwrap_or(cfg.dt);
            cfg.t_end = t_end.unwrap_or(cfg.t_end);
            cfg.k0 = k0.unwrap_or(cfg.k0);
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.validate()?;
            let summary = simulate_to_path(&cfg, &out, csv, SimulationOptions { timing })
                .with_context(|| format!("simulation writing {}", out.display()))?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            print_json(&serde_json::to_value(&summary)?)
        }
        Command::Anneal {
            config,
            out,
            beta_min,
            beta_max,
            growth,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.anneal.beta_min = beta_min.or(cfg.anneal.beta_min);
            cfg.anneal.beta_max = beta_max.or(cfg.anneal.beta_max);
            cfg.anneal.growth = growth.or(cfg.anneal.growth);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let problem = cfg.problem()?;
            let schedule = cfg.schedule(&problem);
            let res = anneal(&problem.model, &problem.params, &schedule)?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            let doc = json!({
                "beta": schedule.beta_max,
                "params": ParamsDocument::from_params(&res.params),
                "flat": res.params.flatten(),
                "objective": res.objective,
                "f_inf": res.f_inf(),
                "vstar": res.tables.vstar,
                "routes": greedy_routes(&res.model, &res.policy, &problem.sources),
                "stages": res.stages,
                "warnings": res.warnings,
            });
            let mut w =
                BufWriter::new(File::create(&out).with_context(|| out.display().to_string())?);
            serde_json::to_writer_pretty(&mut w, &doc)?;
            w.write_all(b"\n")?;
            w.flush()?;
            print_json(
                &json!({ "objective": res.objective, "f_inf": res.f_inf(), "stages": res.stages.len() }),
            )
        }
        Command::Baseline {
            config,
            out,
            resolve_every,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.resolve_every = resolve_every.or(cfg.resolve_every);
            cfg.validate()?;
            let summary = baseline_to_path(&cfg, &out)
                .with_context(|| format!("baseline writing {}", out.display()))?;
            print_json(&serde_json::to_value(&summary)?)
        }
        Command::Verify { seed, sizes } => {
            let report = verify_suite(seed, &sizes);
            for r in &report.results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!(
                    "{status} {:<48} size={:<3} cases={}",
                    r.property, r.size, r.cases
                );
                if let Some(c) = &r.counterexample {
                    println!("     counterexample: {c}");
                }
            }
            if !report.passed() {
                bail!("{} properties failed", report.failures().count());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
