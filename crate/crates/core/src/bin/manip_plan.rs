use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use manip_planner::experiment::{run_comparison, run_interp_sweep, run_scenario};
use manip_planner::kinematics::{KinematicChain, TaskSpace};
use manip_planner::manipulability::estimate_lambda_max;
use manip_planner::scenario::{Scenario, LAMBDA_MAX_SAMPLES, LAMBDA_MAX_SEED};

#[derive(Parser)]
#[command(
    name = "manip-plan",
    version,
    about = "Singularity-aware GP trajectory planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scenario and export trajectory.csv, lambda_profile.csv, report.json.
    Plan {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Prior vs baseline vs singularity-aware runs with normalized λ profiles.
    Compare {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-plan for several interpolation counts and export sweep.csv.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,2,4,8")]
        interp: Vec<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a scenario file and its robot model without planning.
    Validate { scenario: PathBuf },
    /// Estimate λ_max for a robot model by random sampling.
    Calibrate {
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,6")]
        task_dims: Vec<usize>,
        #[arg(long, default_value_t = LAMBDA_MAX_SAMPLES)]
        samples: usize,
        /// Store the estimates in the model file.
        #[arg(long)]
        write: bool,
    },
}

fn load(path: &Path) -> Result<manip_planner::scenario::Problem> {
    let scenario = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    scenario
        .resolve()
        .with_context(|| format!("resolving {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Plan { scenario, out } => {
            let problem = load(&scenario)?;
            let artifacts = run_scenario(&problem)?;
            artifacts.write(&out)?;
            let r = &artifacts.result;
            let report = r.report.as_ref().expect("optimized run");
            println!(
                "{}: converged={} iterations={} final_cost={:.6e} mean_lambda={:.6} min_lambda={:.6} goal_error={:.3e}",
                problem.scenario.name,
                report.converged,
                report.iterations,
                report.final_cost,
                r.metrics.mean_lambda,
                r.metrics.min_lambda,
                r.metrics.goal_error
            );
            if let Some(free) = r.metrics.collision_free {
                println!(
                    "collision_free={free} min_clearance={:.4}",
                    r.metrics.min_clearance.unwrap_or(f64::NAN)
                );
            }
            println!("wrote {}", out.display());
            Ok(if r.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Compare { scenario, out } => {
            let problem = load(&scenario)?;
            let report = run_comparison(&problem)?;
            report.write(&out)?;
            println!(
                "normalization (max observed lambda) = {:.6}",
                report.normalization
            );
            for r in report.runs() {
                println!(
                    "{:>18}: mean_lambda={:.6} min_lambda={:.6} converged={:?} collision_free={:?}",
                    r.label,
                    r.metrics.mean_lambda,
                    r.metrics.min_lambda,
                    r.report.as_ref().map(|x| x.converged),
                    r.metrics.collision_free
                );
            }
            println!("wrote {}", out.display());
            let ok = report.baseline.success() && report.singularity_aware.success();
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Sweep {
            scenario,
            interp,
            out,
        } => {
            let problem = load(&scenario)?;
            let report = run_interp_sweep(&problem, &interp)?;
            report.write(&out)?;
            println!("prior mean_lambda={:.6}", report.prior_mean_lambda);
            for e in &report.entries {
                println!(
                    "n_interp={:>3}: mean_lambda={:.6} min_lambda={:.6} converged={}",
                    e.n_interp, e.mean_lambda, e.min_lambda, e.converged
                );
            }
            println!("wrote {}", out.display());
            let ok = report.entries.iter().all(|e| e.converged);
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Validate { scenario } => {
            let problem = load(&scenario)?;
            let s = &problem.scenario;
            println!(
                "{}: robot={} dof={} states={} n_interp={} task_dim={} lambda_max={:.6} obstacles={}",
                s.name,
                problem.chain.name,
                problem.chain.dof(),
                s.num_support + 1,
                s.n_interp,
                s.task_dim.dim(),
                problem.singularity.lambda_max,
                s.obstacles.len()
            );
            println!("ok");
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate {
            model,
            task_dims,
            samples,
            write,
        } => {
            let mut chain = KinematicChain::load(&model)?;
            for dim in task_dims {
                let task = TaskSpace::from_dim(dim)?;
                let l = estimate_lambda_max(&chain, task, samples, LAMBDA_MAX_SEED)?;
                println!("task_dim={dim}: lambda_max={l:.12}");
                chain.lambda_max.set(task, l);
            }
            if write {
                chain.save(&model)?;
                println!("updated {}", model.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
