//! Singularity-avoiding trajectory optimization for serial manipulators.
//!
//! A joint trajectory is modelled as a constant-velocity Gaussian process
//! sampled at support states. Planning is MAP inference on a factor graph:
//! GP prior factors keep the motion smooth, a goal factor pins the final
//! end-effector position, logarithmic manipulability factors push
//! configurations away from singularities, and optional hinge-loss factors
//! keep body spheres clear of obstacles described by a signed distance field.
//! Cost factors can also be placed at GP-interpolated states between
//! support states, which adds gradient information without adding variables.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collision;
pub mod error;
pub mod experiment;
pub mod factor_graph;
pub mod gp_prior;
pub mod kinematics;
pub mod manipulability;
pub mod scenario;

pub use error::{Error, Result};
