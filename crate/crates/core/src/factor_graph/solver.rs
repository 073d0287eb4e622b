use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::linear::BlockSystem;
use super::FactorGraph;
use crate::error::{Error, Result};
use crate::gp_prior::SupportTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Method {
    GaussNewton,
    #[default]
    LevenbergMarquardt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub method: Method,
    pub max_iterations: usize,
    pub rel_cost_tol: f64,
    pub abs_grad_tol: f64,
    pub lm_init_damping: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            method: Method::LevenbergMarquardt,
            max_iterations: 100,
            rel_cost_tol: 1e-6,
            abs_grad_tol: 1e-8,
            lm_init_damping: 1e-4,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_cost_tol > 0.0 && self.abs_grad_tol > 0.0 && self.lm_init_damping > 0.0) {
            return Err(Error::Input(
                "solver tolerances and damping must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Convergence summary. `cost_trace` starts with the initial cost and holds
/// the cost after every accepted step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub cost_trace: Vec<f64>,
    pub final_cost: f64,
    pub wall_time_s: f64,
    /// `‖Jᵀr‖∞` at the returned solution.
    pub final_gradient_norm: f64,
    /// Some factor evaluation at the returned solution clamped λ.
    pub degenerate: bool,
}

const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-12;
/// Lower bound on the diagonal scaling of the LM damping term.
const MIN_DIAGONAL: f64 = 1e-9;

struct Linearization {
    system: BlockSystem,
    cost: f64,
    degenerate: bool,
}

fn linearize(graph: &FactorGraph, traj: &SupportTrajectory) -> Result<Linearization> {
    let mut system = BlockSystem::new(graph.num_states, graph.state_dim);
    let mut cost = 0.0;
    let mut degenerate = false;
    for factor in &graph.factors {
        let lin = factor.linearize(traj)?;
        cost += 0.5 * lin.residual.norm_squared();
        degenerate |= lin.degenerate;
        system.add_factor(&lin.residual, &lin.jacobians);
    }
    Ok(Linearization {
        system,
        cost,
        degenerate,
    })
}

fn evaluate_cost(graph: &FactorGraph, traj: &SupportTrajectory) -> Result<f64> {
    graph.factors.iter().map(|f| f.cost(traj)).sum()
}

/// Nonlinear least-squares MAP solve. Returns a local optimum.
pub fn optimize(
    graph: &FactorGraph,
    init: &SupportTrajectory,
    settings: &SolverSettings,
) -> Result<(SupportTrajectory, SolveReport)> {
    settings.validate()?;
    graph.check_trajectory(init)?;
    let started = Instant::now();

    let mut traj = init.clone();
    let mut x = traj.to_vector();
    let mut lin = linearize(graph, &traj)?;
    if !lin.cost.is_finite() {
        return Err(Error::Input("initial cost is not finite".into()));
    }
    let mut cost_trace = vec![lin.cost];
    let mut damping = settings.lm_init_damping;
    let mut growth = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        let gradient = lin.system.gradient();
        if gradient.amax() < settings.abs_grad_tol || lin.cost == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;

        let diag_add = match settings.method {
            Method::GaussNewton => DVector::zeros(x.len()),
            Method::LevenbergMarquardt => {
                lin.system.diagonal().map(|d| damping * d.max(MIN_DIAGONAL))
            }
        };
        let step = match lin.system.solve(&diag_add) {
            Ok(step) => step,
            Err(e) if settings.method == Method::LevenbergMarquardt => {
                damping *= growth;
                growth *= 2.0;
                if damping > MAX_DAMPING {
                    return Err(e);
                }
                continue;
            }
            Err(e) => return Err(e),
        };

        let x_new = &x + &step;
        let candidate = traj.with_vector(&x_new);
        let new_cost = evaluate_cost(graph, &candidate)?;
        let accept = match settings.method {
            Method::GaussNewton => new_cost.is_finite(),
            Method::LevenbergMarquardt => new_cost.is_finite() && new_cost < lin.cost,
        };

        if accept {
            let previous = lin.cost;
            // Gain ratio against the quadratic model; with (H + D)δ = -g the
            // predicted decrease is ½(δᵀDδ - gᵀδ).
            let predicted = 0.5 * (step.dot(&diag_add.component_mul(&step)) - gradient.dot(&step));
            let rho = if predicted > 0.0 {
                (previous - new_cost) / predicted
            } else {
                1.0
            };
            x = x_new;
            traj = candidate;
            lin = linearize(graph, &traj)?;
            cost_trace.push(lin.cost);
            damping =
                (damping * (1.0 / 3.0_f64).max(1.0 - (2.0 * rho - 1.0).powi(3))).max(MIN_DAMPING);
            growth = 2.0;
            let rel = (previous - lin.cost).abs() / previous.max(f64::MIN_POSITIVE);
            if rel < settings.rel_cost_tol {
                converged = true;
                break;
            }
        } else if settings.method == Method::GaussNewton {
            return Err(Error::Input(
                "Gauss-Newton step produced a non-finite cost".into(),
            ));
        } else {
            damping *= growth;
            growth *= 2.0;
            if damping > MAX_DAMPING {
                // No descent direction left at machine precision.
                converged = lin.system.gradient().amax() < 10.0 * settings.abs_grad_tol;
                break;
            }
        }
    }

    let final_gradient_norm = lin.system.gradient().amax();
    if !converged && final_gradient_norm < settings.abs_grad_tol {
        converged = true;
    }
    let report = SolveReport {
        iterations,
        converged,
        final_cost: lin.cost,
        cost_trace,
        wall_time_s: started.elapsed().as_secs_f64(),
        final_gradient_norm,
        degenerate: lin.degenerate,
    };
    Ok((traj, report))
}
