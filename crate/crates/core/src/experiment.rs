//! Experiment orchestration: single plans, prior/baseline/singularity-aware
//! comparisons, interpolation-count sweeps, and their file exports.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::Serialize;

use crate::collision::sphere_clearances;
use crate::error::{Error, Result};
use crate::factor_graph::{optimize, FactorKind, SolveReport};
use crate::gp_prior::SupportTrajectory;
use crate::kinematics::{end_effector_position, geometric_jacobian, JointConfig};
use crate::manipulability::{classify_configuration, ellipsoid, SingularityClass};
use crate::scenario::Problem;

/// Number format for every exported value: 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Diagnostics for one support or interpolated state.
#[derive(Debug, Clone)]
pub struct StateRecord {
    pub time: f64,
    pub support: bool,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub lambda: f64,
    pub sigma_min: f64,
    pub class: SingularityClass,
    pub end_effector: Vector3<f64>,
    pub clearances: Vec<f64>,
}

pub fn evaluate_states(
    problem: &Problem,
    traj: &SupportTrajectory,
    per_segment: usize,
) -> Result<Vec<StateRecord>> {
    traj.dense_states(per_segment, &problem.gp)?
        .into_iter()
        .map(|(state, support)| {
            let q = JointConfig::from_vector(state.position.clone())?;
            let e = ellipsoid(&geometric_jacobian(&problem.chain, &q, problem.task())?)?;
            let clearances = match &problem.grid {
                Some(grid) => sphere_clearances(&problem.chain, &q, grid)?,
                None => Vec::new(),
            };
            Ok(StateRecord {
                time: state.time,
                support,
                position: state.position.as_slice().to_vec(),
                velocity: state.velocity.as_slice().to_vec(),
                lambda: e.volume_measure,
                sigma_min: e.min_singular_value(),
                class: classify_configuration(e.volume_measure, &problem.singularity),
                end_effector: end_effector_position(&problem.chain, &q)?,
                clearances,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMetrics {
    pub mean_lambda: f64,
    pub min_lambda: f64,
    pub max_lambda: f64,
    pub nearly_singular_fraction: f64,
    /// Distance from the final end-effector position to the goal (meters).
    pub goal_error: f64,
    /// Smallest sphere clearance over exported and metric states.
    pub min_clearance: Option<f64>,
    pub collision_free: Option<bool>,
    /// Largest `|q_{k+1} − 2q_k + q_{k−1}|` over support states and joints.
    pub max_second_difference: f64,
}

fn metrics(
    problem: &Problem,
    traj: &SupportTrajectory,
    metric_rows: &[StateRecord],
    export_rows: &[StateRecord],
) -> Result<TrajectoryMetrics> {
    let lambdas: Vec<f64> = metric_rows.iter().map(|r| r.lambda).collect();
    let count = lambdas.len() as f64;
    let last = &traj.states[traj.num_states() - 1];
    let ee = end_effector_position(
        &problem.chain,
        &JointConfig::from_vector(last.position.clone())?,
    )?;
    let min_clearance = problem.grid.as_ref().map(|_| {
        metric_rows
            .iter()
            .chain(export_rows)
            .flat_map(|r| r.clearances.iter().copied())
            .fold(f64::INFINITY, f64::min)
    });
    let max_second_difference = traj
        .states
        .windows(3)
        .map(|w| (&w[2].position - &w[1].position * 2.0 + &w[0].position).amax())
        .fold(0.0, f64::max);
    Ok(TrajectoryMetrics {
        mean_lambda: lambdas.iter().sum::<f64>() / count,
        min_lambda: lambdas.iter().copied().fold(f64::INFINITY, f64::min),
        max_lambda: lambdas.iter().copied().fold(0.0, f64::max),
        nearly_singular_fraction: metric_rows
            .iter()
            .filter(|r| r.class == SingularityClass::NearlySingular)
            .count() as f64
            / count,
        goal_error: (ee - problem.goal()).norm(),
        min_clearance,
        collision_free: min_clearance.map(|c| c >= 0.0),
        max_second_difference,
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    pub enable_singularity: bool,
    pub n_interp: usize,
    pub trajectory: SupportTrajectory,
    /// `None` for the unoptimized prior.
    pub report: Option<SolveReport>,
    pub metrics: TrajectoryMetrics,
    /// Support plus `n_interp` interpolated states per segment.
    pub export_rows: Vec<StateRecord>,
    /// Support plus `metric_interp` interpolated states per segment.
    pub metric_rows: Vec<StateRecord>,
}

impl RunResult {
    fn from_trajectory(
        problem: &Problem,
        label: &str,
        enable_singularity: bool,
        trajectory: SupportTrajectory,
        report: Option<SolveReport>,
    ) -> Result<Self> {
        let n_interp = trajectory.n_interp;
        let export_rows = evaluate_states(problem, &trajectory, n_interp)?;
        let metric_rows = evaluate_states(problem, &trajectory, problem.scenario.metric_interp)?;
        let metrics = metrics(problem, &trajectory, &metric_rows, &export_rows)?;
        Ok(Self {
            label: label.to_string(),
            enable_singularity,
            n_interp,
            trajectory,
            report,
            metrics,
            export_rows,
            metric_rows,
        })
    }

    pub fn converged(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.converged)
    }

    /// Converged and, when obstacles exist, collision-free.
    pub fn success(&self) -> bool {
        self.converged() && self.metrics.collision_free != Some(false)
    }

    pub fn trajectory_csv(&self) -> String {
        let n = self.trajectory.dof();
        let mut out = String::from("time");
        for k in 1..=n {
            let _ = write!(out, ",q{k}");
        }
        for k in 1..=n {
            let _ = write!(out, ",v{k}");
        }
        out.push_str(",lambda\n");
        for r in &self.export_rows {
            out.push_str(&fmt_num(r.time));
            for v in r.position.iter().chain(&r.velocity) {
                out.push(',');
                out.push_str(&fmt_num(*v));
            }
            out.push(',');
            out.push_str(&fmt_num(r.lambda));
            out.push('\n');
        }
        out
    }

    pub fn lambda_profile_csv(&self) -> String {
        let spheres = self.export_rows.first().map_or(0, |r| r.clearances.len());
        let mut out = String::from("time,support,lambda,sigma_min,nearly_singular,ee_x,ee_y,ee_z");
        for k in 1..=spheres {
            let _ = write!(out, ",clearance_{k}");
        }
        out.push('\n');
        for r in &self.export_rows {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                fmt_num(r.time),
                u8::from(r.support),
                fmt_num(r.lambda),
                fmt_num(r.sigma_min),
                u8::from(r.class == SingularityClass::NearlySingular)
            );
            for v in r.end_effector.iter().chain(&r.clearances) {
                out.push(',');
                out.push_str(&fmt_num(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Optimizes the scenario's graph with or without singularity factors.
pub fn plan(problem: &Problem, enable_singularity: bool, n_interp: usize) -> Result<RunResult> {
    let mut init = problem.initial_trajectory(n_interp)?;
    if enable_singularity && problem.scenario.warm_start {
        // Start from the converged baseline rather than the stationary prior.
        let graph = problem.build_graph(&init, false)?;
        init = optimize(&graph, &init, &problem.scenario.solver)?.0;
    }
    let graph = problem.build_graph(&init, enable_singularity)?;
    let (traj, report) = optimize(&graph, &init, &problem.scenario.solver)?;
    let label = if enable_singularity {
        "singularity_aware"
    } else {
        "baseline"
    };
    RunResult::from_trajectory(problem, label, enable_singularity, traj, Some(report))
}

/// The stationary prior, evaluated without optimization.
pub fn prior(problem: &Problem) -> Result<RunResult> {
    let init = problem.initial_trajectory(problem.scenario.n_interp)?;
    RunResult::from_trajectory(problem, "prior", false, init, None)
}

#[derive(Debug, Serialize)]
struct ReportJson<'a> {
    scenario: &'a str,
    iterations: usize,
    converged: bool,
    cost_trace: &'a [f64],
    final_cost: f64,
    wall_time_s: f64,
    final_gradient_norm: f64,
    degenerate: bool,
    enable_singularity_factors: bool,
    n_interp: usize,
    lambda_max: f64,
    factor_counts: Vec<(FactorKind, usize)>,
    metrics: &'a TrajectoryMetrics,
}

pub struct RunArtifacts {
    pub result: RunResult,
    pub trajectory_csv: String,
    pub lambda_profile_csv: String,
    pub report_json: String,
}

impl RunArtifacts {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("trajectory.csv"), &self.trajectory_csv)?;
        write_file(&dir.join("lambda_profile.csv"), &self.lambda_profile_csv)?;
        write_file(&dir.join("report.json"), &self.report_json)
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Plans the scenario as configured and renders its export files.
pub fn run_scenario(problem: &Problem) -> Result<RunArtifacts> {
    let s = &problem.scenario;
    let result = plan(problem, s.enable_singularity_factors, s.n_interp)?;
    let report = result.report.as_ref().expect("optimized run has a report");
    let graph = problem.build_graph(
        &problem.initial_trajectory(s.n_interp)?,
        s.enable_singularity_factors,
    )?;
    let kinds = [
        FactorKind::StartPrior,
        FactorKind::GpPrior,
        FactorKind::Singularity,
        FactorKind::InterpolatedSingularity,
        FactorKind::Collision,
        FactorKind::InterpolatedCollision,
        FactorKind::GoalPosition,
    ];
    let json = ReportJson {
        scenario: &s.name,
        iterations: report.iterations,
        converged: report.converged,
        cost_trace: &report.cost_trace,
        final_cost: report.final_cost,
        wall_time_s: report.wall_time_s,
        final_gradient_norm: report.final_gradient_norm,
        degenerate: report.degenerate,
        enable_singularity_factors: s.enable_singularity_factors,
        n_interp: s.n_interp,
        lambda_max: problem.singularity.lambda_max,
        factor_counts: kinds.iter().map(|&k| (k, graph.count(k))).collect(),
        metrics: &result.metrics,
    };
    Ok(RunArtifacts {
        trajectory_csv: result.trajectory_csv(),
        lambda_profile_csv: result.lambda_profile_csv(),
        report_json: serde_json::to_string_pretty(&json).expect("report serializes") + "\n",
        result,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub final_cost: Option<f64>,
    pub metrics: TrajectoryMetrics,
}

impl From<&RunResult> for RunSummary {
    fn from(r: &RunResult) -> Self {
        Self {
            label: r.label.clone(),
            converged: r.report.as_ref().map(|x| x.converged),
            iterations: r.report.as_ref().map(|x| x.iterations),
            final_cost: r.report.as_ref().map(|x| x.final_cost),
            metrics: r.metrics.clone(),
        }
    }
}

/// Prior, baseline and singularity-aware runs on one scenario with λ
/// profiles normalized to the largest value observed across all three.
pub struct ComparisonReport {
    pub prior: RunResult,
    pub baseline: RunResult,
    pub singularity_aware: RunResult,
    pub normalization: f64,
}

impl ComparisonReport {
    pub fn runs(&self) -> [&RunResult; 3] {
        [&self.prior, &self.baseline, &self.singularity_aware]
    }

    /// Normalized λ profiles on the shared metric time grid.
    pub fn normalized_profiles(&self) -> [Vec<f64>; 3] {
        self.runs().map(|r| {
            r.metric_rows
                .iter()
                .map(|row| row.lambda / self.normalization)
                .collect()
        })
    }

    pub fn profile_csv(&self) -> String {
        let mut out = String::from(
            "time,lambda_prior,lambda_baseline,lambda_singularity,\
             normalized_prior,normalized_baseline,normalized_singularity\n",
        );
        let [p, b, s] = self.runs();
        for ((rp, rb), rs) in p.metric_rows.iter().zip(&b.metric_rows).zip(&s.metric_rows) {
            let values = [
                rp.time,
                rp.lambda,
                rb.lambda,
                rs.lambda,
                rp.lambda / self.normalization,
                rb.lambda / self.normalization,
                rs.lambda / self.normalization,
            ];
            out.push_str(&values.map(fmt_num).join(","));
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary {
            normalization: f64,
            runs: Vec<RunSummary>,
        }
        let summary = Summary {
            normalization: self.normalization,
            runs: self.runs().iter().map(|r| RunSummary::from(*r)).collect(),
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("comparison.csv"), &self.profile_csv())?;
        write_file(&dir.join("comparison.json"), &self.summary_json())?;
        for r in self.runs() {
            write_file(
                &dir.join(format!("trajectory_{}.csv", r.label)),
                &r.trajectory_csv(),
            )?;
        }
        Ok(())
    }
}

pub fn run_comparison(problem: &Problem) -> Result<ComparisonReport> {
    let n_interp = problem.scenario.n_interp;
    let prior = prior(problem)?;
    let baseline = plan(problem, false, n_interp)?;
    let singularity_aware = plan(problem, true, n_interp)?;
    let normalization = [&prior, &baseline, &singularity_aware]
        .iter()
        .flat_map(|r| r.metric_rows.iter().map(|row| row.lambda))
        .fold(0.0, f64::max);
    if !(normalization > 0.0) {
        return Err(Error::Input(
            "all runs are exactly singular; nothing to normalize".into(),
        ));
    }
    Ok(ComparisonReport {
        prior,
        baseline,
        singularity_aware,
        normalization,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub n_interp: usize,
    pub mean_lambda: f64,
    pub min_lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_cost: f64,
    pub collision_free: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub prior_mean_lambda: f64,
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn csv(&self) -> String {
        let mut out =
            String::from("n_interp,mean_lambda,min_lambda,converged,iterations,final_cost\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.n_interp,
                fmt_num(e.mean_lambda),
                fmt_num(e.min_lambda),
                u8::from(e.converged),
                e.iterations,
                fmt_num(e.final_cost)
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("sweep.csv"), &self.csv())?;
        let json = serde_json::to_string_pretty(self).expect("sweep serializes") + "\n";
        write_file(&dir.join("sweep.json"), &json)
    }
}

/// Re-plans with each interpolation count; statistics use the scenario's
/// fixed metric grid so counts are comparable.
pub fn run_interp_sweep(problem: &Problem, counts: &[usize]) -> Result<SweepReport> {
    let prior_mean_lambda = prior(problem)?.metrics.mean_lambda;
    let entries = counts
        .iter()
        .map(|&count| {
            let run = plan(problem, problem.scenario.enable_singularity_factors, count)?;
            let report = run.report.as_ref().expect("optimized run has a report");
            Ok(SweepEntry {
                n_interp: count,
                mean_lambda: run.metrics.mean_lambda,
                min_lambda: run.metrics.min_lambda,
                converged: report.converged,
                iterations: report.iterations,
                final_cost: report.final_cost,
                collision_free: run.metrics.collision_free,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        prior_mean_lambda,
        entries,
    })
}
