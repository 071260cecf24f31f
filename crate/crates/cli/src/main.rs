//! `rendezvous`: command-line driver for the minimum-fuel rendezvous
//! experiments.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rendezvous_core::pipeline::{self, Controller, OutputDir, PipelineError, RunReport};
use rendezvous_core::scenario::{Scenario, ScenarioConfig};

const EXIT_NONCONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "rendezvous", version, about = "Koopman vs linearized minimum-fuel rendezvous")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training trajectories on the nonlinear plant.
    GenData(Common),
    /// Fit the lifted linear model to the training data.
    Fit(Common),
    /// Plan minimum-fuel control sequences.
    Solve(Common),
    /// Apply planned controls to the nonlinear plant.
    Simulate(Common),
    /// Compute terminal errors and fuel, draw the charts.
    Report(Common),
    /// All stages in sequence.
    Run(Common),
    /// Merge run reports into one comparison table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for both training data and RBF centres.
    #[arg(long)]
    seed: Option<u64>,
    /// 1000 trajectories × 2000 steps, N = 500, N_k = 120.
    #[arg(long)]
    paper_scale: bool,
    /// Controllers to plan or evaluate; repeatable.
    #[arg(long, value_enum)]
    controller: Vec<ControllerArg>,
    /// Hold the target's true anomaly at its initial value.
    #[arg(long)]
    freeze_anomaly: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// `report.json` files, or directories containing one.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Write `comparison.csv` here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Koopman,
    Linear,
    Both,
}

impl Common {
    fn controllers(&self) -> Vec<Controller> {
        let mut out = Vec::new();
        let all = if self.controller.is_empty() {
            &[ControllerArg::Both][..]
        } else {
            &self.controller[..]
        };
        for c in Controller::ALL {
            let wanted = all.iter().any(|a| {
                *a == ControllerArg::Both
                    || (*a == ControllerArg::Koopman && c == Controller::Koopman)
                    || (*a == ControllerArg::Linear && c == Controller::Linear)
            });
            if wanted {
                out.push(c);
            }
        }
        out
    }

    fn scenario(&self) -> Result<Scenario, PipelineError> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if self.paper_scale {
            cfg.apply_paper_scale();
        }
        if let Some(seed) = self.seed {
            cfg.apply_seed(seed);
        }
        if self.freeze_anomaly {
            cfg.flags.freeze_anomaly = true;
        }
        Ok(cfg.resolve()?)
    }
}

fn print_report(r: &RunReport) {
    println!("scenario {} (N = {}, T = {} s)", r.scenario, r.horizon, r.step);
    println!(
        "{:<9} {:>16} {:>16} {:>10} {:>14}",
        "", "terminal error", "fuel J21", "IRLS it", "constraint res"
    );
    for c in &r.controllers {
        println!(
            "{:<9} {:>16.6e} {:>16.6e} {:>10} {:>14.3e}{}",
            c.controller.name(),
            c.terminal_error_l2,
            c.fuel_cost_l21,
            c.irls.iterations,
            c.irls.constraint_residual,
            if c.irls.converged { "" } else { "  (not converged)" }
        );
    }
}

fn with_output<T>(
    common: &Common,
    body: impl FnOnce(&Scenario, &mut OutputDir) -> Result<T, PipelineError>,
) -> Result<T, PipelineError> {
    let scenario = common.scenario()?;
    let mut out = OutputDir::open(&common.out)?;
    let value = body(&scenario, &mut out)?;
    out.commit();
    Ok(value)
}

fn execute(command: Command) -> Result<u8, PipelineError> {
    let converged = |ok: bool| if ok { 0 } else { EXIT_NONCONVERGED };
    match command {
        Command::GenData(c) => {
            let data = with_output(&c, pipeline::stage_gen_data)?;
            println!(
                "{} snapshot columns, {} truncated trajectories",
                data.len(),
                data.truncations.len()
            );
            Ok(0)
        }
        Command::Fit(c) => {
            let model = with_output(&c, |s, out| pipeline::stage_fit(s, out, None))?;
            println!("fitted N_k = {} model, residual {:.6e}", model.n_lift(), model.fit_residual());
            Ok(0)
        }
        Command::Solve(c) => {
            let controllers = c.controllers();
            let plans = with_output(&c, |s, out| pipeline::stage_solve(s, out, &controllers, None))?;
            for p in &plans {
                println!(
                    "{}: fuel {:.6e}, {} IRLS iterations ({:?})",
                    p.record.controller, p.record.fuel_cost_l21, p.record.irls.iterations, p.record.irls.stop_reason
                );
            }
            Ok(converged(plans.iter().all(|p| p.record.irls.converged)))
        }
        Command::Simulate(c) => {
            let controllers = c.controllers();
            with_output(&c, |s, out| pipeline::stage_simulate(s, out, &controllers))?;
            Ok(0)
        }
        Command::Report(c) => {
            let controllers = c.controllers();
            let r = with_output(&c, |s, out| {
                pipeline::stage_report(s, out, &controllers, BTreeMap::new())
            })?;
            print_report(&r);
            Ok(converged(r.all_converged()))
        }
        Command::Run(c) => {
            let controllers = c.controllers();
            let r = with_output(&c, |s, out| pipeline::run_pipeline(s, out, &controllers))?;
            print_report(&r);
            Ok(converged(r.all_converged()))
        }
        Command::Compare(args) => {
            let mut reports = Vec::new();
            for p in &args.reports {
                let path = if p.is_dir() { p.join(pipeline::REPORT_FILE) } else { p.clone() };
                let text = std::fs::read_to_string(&path).map_err(|_| PipelineError::MissingArtifact {
                    file: path.display().to_string(),
                    producer: "report",
                })?;
                reports.push(RunReport::from_json(&text)?);
            }
            let csv = pipeline::comparison_csv(&reports);
            match args.out {
                Some(dir) => {
                    let mut out = OutputDir::open(&dir)?;
                    let path = out.write("comparison.csv", csv.as_bytes())?;
                    out.commit();
                    println!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
