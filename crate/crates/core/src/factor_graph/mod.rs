//! Factor graph over GP support states and its MAP solver.
//!
//! Every factor yields a whitened residual `W·r` and whitened Jacobians with
//! respect to the 2n-dimensional states it touches. The MAP objective is
//! `Σ ½‖W·r‖²`.

mod build;
pub mod linear;
mod solver;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::collision::{collision_residual_from_frames, CollisionParams, SdfGrid};
use crate::error::{Error, Result};
use crate::gp_prior::{
    interpolation_coefficients, prior_sqrt_information, transition, GpPriorParams,
    SupportTrajectory,
};
use crate::kinematics::{
    forward_kinematics, jacobian_and_partials_from_frames, JacobianSet, JointConfig,
    KinematicChain, TaskSpace,
};
use crate::manipulability::{singularity_cost_from_set, SingularityCostParams};

pub use build::{build_graph, GraphOptions};
pub use solver::{optimize, Method, SolveReport, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum FactorKind {
    StartPrior,
    StatePrior,
    GpPrior,
    Singularity,
    InterpolatedSingularity,
    Collision,
    InterpolatedCollision,
    GoalPosition,
}

/// Where a unary cost is evaluated: at a support state, or at a GP
/// interpolated state between support states `i` and `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum StateRef {
    Support(usize),
    Interpolated {
        i: usize,
        j: usize,
        tau: f64,
        lambda: DMatrix<f64>,
        psi: DMatrix<f64>,
    },
}

impl StateRef {
    pub fn interpolated(
        traj: &SupportTrajectory,
        i: usize,
        offset: f64,
        params: &GpPriorParams,
    ) -> Result<Self> {
        let j = i + 1;
        if j >= traj.num_states() {
            return Err(Error::Range(format!("segment {i} out of range")));
        }
        let (ti, tj) = (traj.states[i].time, traj.states[j].time);
        if !(offset > 0.0 && offset < tj - ti) {
            return Err(Error::Range(format!(
                "interpolated factor needs t_i < tau < t_j, got offset {offset}"
            )));
        }
        let (lambda, psi) = interpolation_coefficients(tj - ti, offset, params)?;
        Ok(StateRef::Interpolated {
            i,
            j,
            tau: ti + offset,
            lambda,
            psi,
        })
    }

    fn indices(&self) -> Vec<usize> {
        match self {
            StateRef::Support(k) => vec![*k],
            StateRef::Interpolated { i, j, .. } => vec![*i, *j],
        }
    }

    fn is_interpolated(&self) -> bool {
        matches!(self, StateRef::Interpolated { .. })
    }

    /// Joint positions at this state.
    pub fn position(&self, traj: &SupportTrajectory) -> DVector<f64> {
        match self {
            StateRef::Support(k) => traj.states[*k].position.clone(),
            StateRef::Interpolated {
                i, j, lambda, psi, ..
            } => {
                let n = traj.dof();
                let x = lambda * traj.states[*i].stacked() + psi * traj.states[*j].stacked();
                x.rows(0, n).into_owned()
            }
        }
    }

    /// Chains `∂r/∂θ` (r × n) onto the connected support states (r × 2n each).
    fn chain_jacobian(&self, d_pos: &DMatrix<f64>) -> Vec<(usize, DMatrix<f64>)> {
        let n = d_pos.ncols();
        match self {
            StateRef::Support(k) => {
                let mut jac = DMatrix::zeros(d_pos.nrows(), 2 * n);
                jac.view_mut((0, 0), (d_pos.nrows(), n)).copy_from(d_pos);
                vec![(*k, jac)]
            }
            StateRef::Interpolated {
                i, j, lambda, psi, ..
            } => vec![
                (*i, d_pos * lambda.rows(0, n)),
                (*j, d_pos * psi.rows(0, n)),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorModel {
    /// `x_k − mean` on the full 2n state.
    StatePrior { index: usize, mean: DVector<f64> },
    /// `Φ(Δt)·x_i − x_j`.
    GpPrior {
        i: usize,
        j: usize,
        phi: DMatrix<f64>,
    },
    /// `h = ln(λ_max / λ)`.
    Singularity {
        at: StateRef,
        chain: Arc<KinematicChain>,
        task: TaskSpace,
        params: SingularityCostParams,
    },
    /// Hinge loss per body sphere.
    Collision {
        at: StateRef,
        chain: Arc<KinematicChain>,
        grid: Arc<SdfGrid>,
        params: CollisionParams,
    },
    /// End-effector position minus goal.
    GoalPosition {
        index: usize,
        goal: Vector3<f64>,
        chain: Arc<KinematicChain>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub model: FactorModel,
    pub noise_sqrt_info: DMatrix<f64>,
}

/// Whitened residual and per-state Jacobians of one factor.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub residual: DVector<f64>,
    pub jacobians: Vec<(usize, DMatrix<f64>)>,
    /// Manipulability was clamped while evaluating this factor.
    pub degenerate: bool,
}

fn isotropic_sqrt_info(dim: usize, variance: f64) -> Result<DMatrix<f64>> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Input(format!(
            "noise variance {variance} must be positive"
        )));
    }
    Ok(DMatrix::identity(dim, dim) / variance.sqrt())
}

impl Factor {
    pub fn state_prior(index: usize, mean: DVector<f64>, variance: f64) -> Result<Self> {
        Ok(Self {
            noise_sqrt_info: isotropic_sqrt_info(mean.len(), variance)?,
            model: FactorModel::StatePrior { index, mean },
        })
    }

    pub fn gp_prior(i: usize, j: usize, dt: f64, params: &GpPriorParams) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Ordering(format!("GP prior segment length {dt}")));
        }
        Ok(Self {
            noise_sqrt_info: prior_sqrt_information(dt, params)?,
            model: FactorModel::GpPrior {
                i,
                j,
                phi: transition(dt, params.dof()),
            },
        })
    }

    pub fn singularity(
        at: StateRef,
        chain: Arc<KinematicChain>,
        task: TaskSpace,
        params: SingularityCostParams,
    ) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            noise_sqrt_info: isotropic_sqrt_info(1, params.sigma_sbar)?,
            model: FactorModel::Singularity {
                at,
                chain,
                task,
                params,
            },
        })
    }

    pub fn collision(
        at: StateRef,
        chain: Arc<KinematicChain>,
        grid: Arc<SdfGrid>,
        params: CollisionParams,
    ) -> Result<Self> {
        if chain.body_spheres.is_empty() {
            return Err(Error::Input("collision factor needs body spheres".into()));
        }
        Ok(Self {
            noise_sqrt_info: isotropic_sqrt_info(chain.body_spheres.len(), params.sigma_obs)?,
            model: FactorModel::Collision {
                at,
                chain,
                grid,
                params,
            },
        })
    }

    pub fn goal_position(
        index: usize,
        goal: Vector3<f64>,
        chain: Arc<KinematicChain>,
        variance: f64,
    ) -> Result<Self> {
        Ok(Self {
            noise_sqrt_info: isotropic_sqrt_info(3, variance)?,
            model: FactorModel::GoalPosition { index, goal, chain },
        })
    }

    pub fn kind(&self) -> FactorKind {
        match &self.model {
            FactorModel::StatePrior { index: 0, .. } => FactorKind::StartPrior,
            FactorModel::StatePrior { .. } => FactorKind::StatePrior,
            FactorModel::GpPrior { .. } => FactorKind::GpPrior,
            FactorModel::Singularity { at, .. } if at.is_interpolated() => {
                FactorKind::InterpolatedSingularity
            }
            FactorModel::Singularity { .. } => FactorKind::Singularity,
            FactorModel::Collision { at, .. } if at.is_interpolated() => {
                FactorKind::InterpolatedCollision
            }
            FactorModel::Collision { .. } => FactorKind::Collision,
            FactorModel::GoalPosition { .. } => FactorKind::GoalPosition,
        }
    }

    pub fn connected_states(&self) -> Vec<usize> {
        match &self.model {
            FactorModel::StatePrior { index, .. } | FactorModel::GoalPosition { index, .. } => {
                vec![*index]
            }
            FactorModel::GpPrior { i, j, .. } => vec![*i, *j],
            FactorModel::Singularity { at, .. } | FactorModel::Collision { at, .. } => at.indices(),
        }
    }

    pub fn residual_dim(&self) -> usize {
        self.noise_sqrt_info.nrows()
    }

    /// Unwhitened residual with Jacobians per connected state.
    pub fn error(&self, traj: &SupportTrajectory) -> Result<Linearized> {
        match &self.model {
            FactorModel::StatePrior { index, mean } => {
                let x = traj.states[*index].stacked();
                let dim = x.len();
                Ok(Linearized {
                    residual: x - mean,
                    jacobians: vec![(*index, DMatrix::identity(dim, dim))],
                    degenerate: false,
                })
            }
            FactorModel::GpPrior { i, j, phi } => {
                let dim = phi.nrows();
                Ok(Linearized {
                    residual: phi * traj.states[*i].stacked() - traj.states[*j].stacked(),
                    jacobians: vec![(*i, phi.clone()), (*j, -DMatrix::identity(dim, dim))],
                    degenerate: false,
                })
            }
            FactorModel::Singularity {
                at,
                chain,
                task,
                params,
            } => {
                let q = JointConfig::from_vector(at.position(traj))?;
                let frames = forward_kinematics(chain, &q)?;
                let (full, partials) = jacobian_and_partials_from_frames(&frames);
                let set = JacobianSet {
                    jacobian: task.select(&full),
                    partials: partials.iter().map(|p| task.select(p)).collect(),
                };
                let cost = singularity_cost_from_set(&set, params)?;
                let d_pos = DMatrix::from_row_slice(1, cost.dh_dq.len(), cost.dh_dq.as_slice());
                Ok(Linearized {
                    residual: DVector::from_element(1, cost.h),
                    jacobians: at.chain_jacobian(&d_pos),
                    degenerate: cost.degenerate,
                })
            }
            FactorModel::Collision {
                at,
                chain,
                grid,
                params,
            } => {
                let q = JointConfig::from_vector(at.position(traj))?;
                let frames = forward_kinematics(chain, &q)?;
                let c = collision_residual_from_frames(chain, &frames, grid, params);
                Ok(Linearized {
                    residual: c.residual,
                    jacobians: at.chain_jacobian(&c.jacobian),
                    degenerate: false,
                })
            }
            FactorModel::GoalPosition { index, goal, chain } => {
                let q = JointConfig::from_vector(traj.states[*index].position.clone())?;
                let frames = forward_kinematics(chain, &q)?;
                let (full, _) = jacobian_and_partials_from_frames(&frames);
                let pe = frames[chain.dof()].position;
                let d_pos = full.rows(0, 3).into_owned();
                Ok(Linearized {
                    residual: DVector::from_column_slice((pe - goal).as_slice()),
                    jacobians: StateRef::Support(*index).chain_jacobian(&d_pos),
                    degenerate: false,
                })
            }
        }
    }

    /// Whitened residual `W·r` and Jacobians `W·∂r/∂x`.
    pub fn linearize(&self, traj: &SupportTrajectory) -> Result<Linearized> {
        let mut lin = self.error(traj)?;
        lin.residual = &self.noise_sqrt_info * lin.residual;
        for (_, j) in lin.jacobians.iter_mut() {
            *j = &self.noise_sqrt_info * &*j;
        }
        Ok(lin)
    }

    /// `½‖W·r‖²`.
    pub fn cost(&self, traj: &SupportTrajectory) -> Result<f64> {
        let r = &self.noise_sqrt_info * self.error(traj)?.residual;
        Ok(0.5 * r.norm_squared())
    }
}

/// Whitened residual of `factor` at `traj`.
pub fn residual(factor: &Factor, traj: &SupportTrajectory) -> Result<Linearized> {
    factor.linearize(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    pub factors: Vec<Factor>,
    pub num_states: usize,
    pub state_dim: usize,
}

impl FactorGraph {
    pub fn new(num_states: usize, state_dim: usize) -> Self {
        Self {
            factors: Vec::new(),
            num_states,
            state_dim,
        }
    }

    pub fn add(&mut self, factor: Factor) -> Result<()> {
        if let Some(bad) = factor
            .connected_states()
            .into_iter()
            .find(|&k| k >= self.num_states)
        {
            return Err(Error::Range(format!(
                "factor references state {bad} but graph has {}",
                self.num_states
            )));
        }
        let info = &factor.noise_sqrt_info;
        if !info.is_square() || info.rank(0.0) < info.nrows() {
            return Err(Error::Input(
                "noise square-root information must be full rank".into(),
            ));
        }
        self.factors.push(factor);
        Ok(())
    }

    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind() == kind).count()
    }

    /// Copy without the factors of the given kinds.
    pub fn without(&self, kinds: &[FactorKind]) -> FactorGraph {
        FactorGraph {
            factors: self
                .factors
                .iter()
                .filter(|f| !kinds.contains(&f.kind()))
                .cloned()
                .collect(),
            num_states: self.num_states,
            state_dim: self.state_dim,
        }
    }

    pub(crate) fn check_trajectory(&self, traj: &SupportTrajectory) -> Result<()> {
        if traj.num_states() != self.num_states || traj.state_dim() != self.state_dim {
            return Err(Error::Dimension {
                expected: self.num_states * self.state_dim,
                actual: traj.num_states() * traj.state_dim(),
                context: "trajectory vs factor graph",
            });
        }
        Ok(())
    }
}

/// `Σ ½‖W·r‖²` over all factors.
pub fn total_cost(graph: &FactorGraph, traj: &SupportTrajectory) -> Result<f64> {
    graph.check_trajectory(traj)?;
    graph.factors.iter().map(|f| f.cost(traj)).sum()
}
