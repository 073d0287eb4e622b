use std::sync::Arc;

use nalgebra::{DVector, Vector3};

use super::{Factor, FactorGraph, StateRef};
use crate::collision::{CollisionParams, SdfGrid};
use crate::error::{Error, Result};
use crate::gp_prior::{GpPriorParams, SupportTrajectory};
use crate::kinematics::{KinematicChain, TaskSpace};
use crate::manipulability::SingularityCostParams;

/// Everything needed to lay factors over a support trajectory.
#[derive(Debug, Clone)]
pub struct GraphOptions {
    pub chain: Arc<KinematicChain>,
    /// Start configuration; the start velocity is pinned to zero.
    pub start: DVector<f64>,
    pub start_variance: f64,
    pub goal: Vector3<f64>,
    pub goal_variance: f64,
    pub gp: GpPriorParams,
    pub singularity: Option<(SingularityCostParams, TaskSpace)>,
    pub collision: Option<(Arc<SdfGrid>, CollisionParams)>,
    /// Interpolated cost factors per segment.
    pub n_interp: usize,
}

/// Start prior on state 0, GP priors between neighbours, singularity and
/// collision factors on every support state and at `n_interp` evenly spaced
/// interpolated states per segment, and a goal factor on the last state.
pub fn build_graph(options: &GraphOptions, traj: &SupportTrajectory) -> Result<FactorGraph> {
    let n = options.chain.dof();
    if traj.dof() != n || options.start.len() != n || options.gp.dof() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: traj.dof(),
            context: "graph options vs trajectory",
        });
    }
    let num_states = traj.num_states();
    let mut graph = FactorGraph::new(num_states, 2 * n);

    let mut start_mean = DVector::zeros(2 * n);
    start_mean.rows_mut(0, n).copy_from(&options.start);
    graph.add(Factor::state_prior(0, start_mean, options.start_variance)?)?;

    for k in 0..num_states - 1 {
        let dt = traj.states[k + 1].time - traj.states[k].time;
        graph.add(Factor::gp_prior(k, k + 1, dt, &options.gp)?)?;
    }

    let add_costs = |graph: &mut FactorGraph, at: StateRef| -> Result<()> {
        if let Some((params, task)) = &options.singularity {
            graph.add(Factor::singularity(
                at.clone(),
                options.chain.clone(),
                *task,
                *params,
            )?)?;
        }
        if let Some((grid, params)) = &options.collision {
            graph.add(Factor::collision(
                at,
                options.chain.clone(),
                grid.clone(),
                *params,
            )?)?;
        }
        Ok(())
    };

    for k in 0..num_states {
        add_costs(&mut graph, StateRef::Support(k))?;
    }
    for seg in 0..num_states - 1 {
        for offset in traj.segment_offsets(seg, options.n_interp) {
            add_costs(
                &mut graph,
                StateRef::interpolated(traj, seg, offset, &options.gp)?,
            )?;
        }
    }

    graph.add(Factor::goal_position(
        num_states - 1,
        options.goal,
        options.chain.clone(),
        options.goal_variance,
    )?)?;
    Ok(graph)
}
