//! Declarative planning scenarios (one JSON file each).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::collision::{build_union_sdf, BoxObstacle, CollisionParams, GridSpec, SdfGrid};
use crate::error::{Error, Result};
use crate::factor_graph::{build_graph, FactorGraph, GraphOptions, SolverSettings};
use crate::gp_prior::{init_trajectory, GpPriorParams, SupportTrajectory};
use crate::kinematics::{KinematicChain, TaskSpace};
use crate::manipulability::{estimate_lambda_max, SingularityCostParams};

/// Samples used to estimate λ_max when neither the scenario nor the model
/// file provides it.
pub const LAMBDA_MAX_SAMPLES: usize = 100_000;
pub const LAMBDA_MAX_SEED: u64 = 0;

fn default_horizon() -> f64 {
    5.0
}
fn default_num_support() -> usize {
    10
}
fn default_sigma_sbar() -> f64 {
    1e-4
}
fn default_sigma_obs() -> f64 {
    1e-3
}
fn default_qc_scale() -> f64 {
    1e3
}
fn default_true() -> bool {
    true
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_tight() -> f64 {
    1e-8
}
fn default_metric_interp() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Free-form provenance note.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Robot model file, relative to the scenario file.
    pub robot: PathBuf,
    pub start_config: Vec<f64>,
    pub goal_position: [f64; 3],
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Number of support segments; the trajectory has `num_support + 1` states.
    #[serde(default = "default_num_support")]
    pub num_support: usize,
    #[serde(default)]
    pub n_interp: usize,
    #[serde(default = "default_sigma_sbar")]
    pub sigma_sbar: f64,
    #[serde(default = "default_sigma_obs")]
    pub sigma_obs: f64,
    #[serde(default = "default_qc_scale")]
    pub qc_scale: f64,
    #[serde(default)]
    pub obstacles: Vec<BoxObstacle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_true")]
    pub enable_singularity_factors: bool,
    /// Initialize singularity-aware runs from the converged baseline.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub task_dim: TaskSpace,
    /// Collision safety margin ε (meters).
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tight")]
    pub start_covariance: f64,
    #[serde(default = "default_tight")]
    pub goal_covariance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdf_grid: Option<GridSpec>,
    /// Interpolated states per segment used for reported λ statistics.
    #[serde(default = "default_metric_interp")]
    pub metric_interp: usize,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads a scenario file and makes its robot path absolute.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut scenario = Self::from_json_str(&text).map_err(|e| Error::json(path, e))?;
        if scenario.robot.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            scenario.robot = base.join(&scenario.robot);
        }
        if scenario.name.is_empty() {
            scenario.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(scenario)
    }

    /// Field-level checks that do not need the robot model.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_sbar", self.sigma_sbar),
            ("sigma_obs", self.sigma_obs),
            ("qc_scale", self.qc_scale),
            ("horizon", self.horizon),
            ("start_covariance", self.start_covariance),
            ("goal_covariance", self.goal_covariance),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Input(format!("{name} must be positive, got {v}")));
            }
        }
        if self.num_support < 2 {
            return Err(Error::Input("num_support must be at least 2".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Input("epsilon must be non-negative".into()));
        }
        if let Some(l) = self.lambda_max {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Input("lambda_max must be positive".into()));
            }
        }
        if !self.goal_position.iter().all(|v| v.is_finite())
            || !self.start_config.iter().all(|v| v.is_finite())
        {
            return Err(Error::Input("start and goal must be finite".into()));
        }
        for b in &self.obstacles {
            if b.half_extents.iter().any(|&h| !(h > 0.0)) {
                return Err(Error::Input(
                    "obstacle half extents must be positive".into(),
                ));
            }
        }
        self.solver.validate()
    }

    /// Loads the robot and derived data; runs every validation.
    pub fn resolve(&self) -> Result<Problem> {
        self.validate()?;
        let mut chain = KinematicChain::load(&self.robot)?;
        if self.start_config.len() != chain.dof() {
            return Err(Error::Dimension {
                expected: chain.dof(),
                actual: self.start_config.len(),
                context: "scenario start_config",
            });
        }
        let goal = Vector3::from(self.goal_position);
        if (goal - chain.base_pose.position).norm() > 2.0 {
            return Err(Error::Input(
                "goal lies outside a 2 m ball around the base".into(),
            ));
        }
        if self.task_dim.dim() > chain.dof() {
            return Err(Error::Input(format!(
                "task dimension {} exceeds robot dof {}",
                self.task_dim.dim(),
                chain.dof()
            )));
        }
        let lambda_max = match self.lambda_max.or(chain.lambda_max.get(self.task_dim)) {
            Some(l) => l,
            None => {
                let l = estimate_lambda_max(
                    &chain,
                    self.task_dim,
                    LAMBDA_MAX_SAMPLES,
                    LAMBDA_MAX_SEED,
                )?;
                chain.lambda_max.set(self.task_dim, l);
                l
            }
        };
        let singularity = SingularityCostParams::new(lambda_max, self.sigma_sbar)?;
        let gp = GpPriorParams::isotropic(chain.dof(), self.qc_scale)?;

        let grid = if self.obstacles.is_empty() {
            None
        } else {
            if chain.body_spheres.is_empty() {
                return Err(Error::Input(
                    "obstacles need a robot model with body spheres".into(),
                ));
            }
            let spec = self
                .sdf_grid
                .unwrap_or_else(|| GridSpec::cube(chain.base_pose.position.into(), 2.4, 0.02));
            Some(Arc::new(build_union_sdf(&self.obstacles, spec)?))
        };
        let collision = CollisionParams::new(self.epsilon, self.sigma_obs)?;

        Ok(Problem {
            scenario: self.clone(),
            chain: Arc::new(chain),
            singularity,
            gp,
            grid,
            collision,
        })
    }
}

/// A scenario with its robot loaded and all derived parameters fixed.
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub chain: Arc<KinematicChain>,
    pub singularity: SingularityCostParams,
    pub gp: GpPriorParams,
    pub grid: Option<Arc<SdfGrid>>,
    pub collision: CollisionParams,
}

impl Problem {
    pub fn start(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.scenario.start_config)
    }

    pub fn goal(&self) -> Vector3<f64> {
        Vector3::from(self.scenario.goal_position)
    }

    pub fn task(&self) -> TaskSpace {
        self.scenario.task_dim
    }

    /// Stationary prior at the start configuration.
    pub fn initial_trajectory(&self, n_interp: usize) -> Result<SupportTrajectory> {
        let q = self.chain.config(&self.scenario.start_config)?;
        let mut traj = init_trajectory(&q, self.scenario.horizon, self.scenario.num_support + 1)?;
        traj.n_interp = n_interp;
        Ok(traj)
    }

    pub fn graph_options(&self, enable_singularity: bool, n_interp: usize) -> GraphOptions {
        GraphOptions {
            chain: self.chain.clone(),
            start: self.start(),
            start_variance: self.scenario.start_covariance,
            goal: self.goal(),
            goal_variance: self.scenario.goal_covariance,
            gp: self.gp.clone(),
            singularity: enable_singularity.then_some((self.singularity, self.task())),
            collision: self.grid.clone().map(|g| (g, self.collision)),
            n_interp,
        }
    }

    pub fn build_graph(
        &self,
        traj: &SupportTrajectory,
        enable_singularity: bool,
    ) -> Result<FactorGraph> {
        build_graph(&self.graph_options(enable_singularity, traj.n_interp), traj)
    }
}
