//! Yoshikawa manipulability, the manipulability ellipsoid, and the
//! logarithmic singularity-avoidance cost built on it.
//!
//! The cost for one configuration is `h = ln(λ_max / λ)`. Its gradient is
//! `−Tr((JJᵀ)⁻¹ ∂J/∂θ_j Jᵀ)`: the factor λ in `∂λ/∂θ_j` cancels against the
//! `1/λ` of the logarithm, so the cost Jacobian never multiplies by λ. Read
//! as a Gaussian residual with variance `Σ_S̄`, this makes `1/λ` log-normal.

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kinematics::{jacobian_partials, JacobianSet, JointConfig, KinematicChain, TaskSpace};

/// Singular values below this are clamped inside `(JJᵀ)⁻¹`.
pub const SIGMA_CLAMP: f64 = 1e-6;
/// λ is clamped at this value inside the logarithm.
pub const LAMBDA_FLOOR: f64 = 1e-9;
/// Default near-singular threshold as a fraction of λ_max.
pub const NEAR_SINGULAR_FRACTION: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct ManipulabilityEllipsoid {
    /// Sorted non-increasing.
    pub singular_values: DVector<f64>,
    /// Principal directions `u_k` as columns.
    pub axes: DMatrix<f64>,
    pub volume_measure: f64,
}

impl ManipulabilityEllipsoid {
    pub fn min_singular_value(&self) -> f64 {
        self.singular_values.min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularityCostParams {
    pub lambda_max: f64,
    pub sigma_sbar: f64,
    pub lambda_floor: f64,
    pub near_singular_threshold: f64,
}

impl SingularityCostParams {
    pub fn new(lambda_max: f64, sigma_sbar: f64) -> Result<Self> {
        let params = Self {
            lambda_max,
            sigma_sbar,
            lambda_floor: LAMBDA_FLOOR,
            near_singular_threshold: NEAR_SINGULAR_FRACTION * lambda_max,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sbar > 0.0) {
            return Err(Error::Input("sigma_sbar must be positive".into()));
        }
        if !(self.lambda_floor > 0.0
            && self.lambda_floor < self.near_singular_threshold
            && self.near_singular_threshold < self.lambda_max)
            || !self.lambda_max.is_finite()
        {
            return Err(Error::Input(format!(
                "need 0 < lambda_floor ({}) < near_singular_threshold ({}) < lambda_max ({})",
                self.lambda_floor, self.near_singular_threshold, self.lambda_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SingularityClass {
    /// λ below the acceptable-volume threshold (label S).
    NearlySingular,
    /// Label S̄.
    NotNearlySingular,
}

fn svd_checked(j: &DMatrix<f64>) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let (m, n) = j.shape();
    if m > n {
        return Err(Error::Dimension {
            expected: n,
            actual: m,
            context: "manipulability needs task rows <= joints",
        });
    }
    if m == 0 || !j.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("jacobian is empty or non-finite".into()));
    }
    Ok(SVD::new(j.clone(), true, false))
}

/// Product of singular values, with numerically rank-deficient inputs mapped to 0.
fn volume(sigma: &DVector<f64>, shape: (usize, usize)) -> f64 {
    let smax = sigma.max();
    let tol = shape.0.max(shape.1) as f64 * f64::EPSILON * smax;
    if sigma.min() <= tol {
        0.0
    } else {
        sigma.product()
    }
}

/// `√det(JJᵀ)` evaluated as the product of singular values of `J`.
pub fn manipulability(j: &DMatrix<f64>) -> Result<f64> {
    let svd = svd_checked(j)?;
    Ok(volume(&svd.singular_values, j.shape()))
}

pub fn ellipsoid(j: &DMatrix<f64>) -> Result<ManipulabilityEllipsoid> {
    let svd = svd_checked(j)?;
    let volume_measure = volume(&svd.singular_values, j.shape());
    Ok(ManipulabilityEllipsoid {
        singular_values: svd.singular_values,
        axes: svd.u.expect("left singular vectors requested"),
        volume_measure,
    })
}

/// Per-joint traces `t_j = Tr((JJᵀ)⁻¹ ∂J_j Jᵀ)` with the clamped inverse,
/// plus λ and whether clamping was active.
struct TraceTerms {
    lambda: f64,
    traces: DVector<f64>,
    clamped: bool,
}

fn trace_terms(set: &JacobianSet) -> Result<TraceTerms> {
    let j = &set.jacobian;
    let svd = svd_checked(j)?;
    let lambda = volume(&svd.singular_values, j.shape());
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let clamped = svd.singular_values.iter().any(|&s| s < SIGMA_CLAMP);
    let inv_sq = svd
        .singular_values
        .map(|s| 1.0 / s.max(SIGMA_CLAMP).powi(2));
    // (JJᵀ)⁻¹ J, so that t_j = <∂J_j, (JJᵀ)⁻¹ J>_F.
    let gram_inv = u * DMatrix::from_diagonal(&inv_sq) * u.transpose();
    let weighted = gram_inv * j;
    let traces = DVector::from_iterator(
        set.partials.len(),
        set.partials.iter().map(|p| p.dot(&weighted)),
    );
    Ok(TraceTerms {
        lambda,
        traces,
        clamped,
    })
}

#[derive(Debug, Clone)]
pub struct ManipulabilityGradient {
    pub lambda: f64,
    pub gradient: DVector<f64>,
    /// Set when singular values were clamped to form the inverse.
    pub degenerate: bool,
}

/// `∂λ/∂θ_j = (λ/2)·Tr((JJᵀ)⁻¹(∂J_j Jᵀ + J ∂J_jᵀ))` via Jacobi's formula.
pub fn manipulability_gradient(
    chain: &KinematicChain,
    q: &JointConfig,
    task: TaskSpace,
) -> Result<ManipulabilityGradient> {
    let set = jacobian_partials(chain, q, task)?;
    let terms = trace_terms(&set)?;
    Ok(ManipulabilityGradient {
        lambda: terms.lambda,
        gradient: &terms.traces * terms.lambda,
        degenerate: terms.clamped || terms.lambda <= LAMBDA_FLOOR,
    })
}

#[derive(Debug, Clone)]
pub struct SingularityCost {
    pub h: f64,
    pub dh_dq: DVector<f64>,
    pub lambda: f64,
    pub degenerate: bool,
}

pub fn singularity_cost(
    chain: &KinematicChain,
    q: &JointConfig,
    params: &SingularityCostParams,
    task: TaskSpace,
) -> Result<SingularityCost> {
    let set = jacobian_partials(chain, q, task)?;
    singularity_cost_from_set(&set, params)
}

pub fn singularity_cost_from_set(
    set: &JacobianSet,
    params: &SingularityCostParams,
) -> Result<SingularityCost> {
    let terms = trace_terms(set)?;
    let clamped_lambda = terms.lambda.max(params.lambda_floor);
    Ok(SingularityCost {
        h: (params.lambda_max / clamped_lambda).ln(),
        dh_dq: -terms.traces,
        lambda: terms.lambda,
        degenerate: terms.clamped || terms.lambda <= params.lambda_floor,
    })
}

pub fn classify_configuration(lambda: f64, params: &SingularityCostParams) -> SingularityClass {
    if lambda < params.near_singular_threshold {
        SingularityClass::NearlySingular
    } else {
        SingularityClass::NotNearlySingular
    }
}

/// `exp(−½ h² / Σ_S̄)`.
pub fn likelihood(h: f64, sigma_sbar: f64) -> f64 {
    (-0.5 * h * h / sigma_sbar).exp()
}

/// Largest λ over `samples` configurations drawn uniformly from `[−π, π]ⁿ`.
pub fn estimate_lambda_max(
    chain: &KinematicChain,
    task: TaskSpace,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chain.dof();
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let values: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        let q = JointConfig::new(values)?;
        let j = crate::kinematics::geometric_jacobian(chain, &q, task)?;
        best = best.max(manipulability(&j)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn planar_jac(q2: f64) -> DMatrix<f64> {
        let chain = KinematicChain::planar(&[1.0, 1.0]).unwrap();
        crate::kinematics::geometric_jacobian(
            &chain,
            &chain.config(&[0.3, q2]).unwrap(),
            TaskSpace::planar(),
        )
        .unwrap()
    }

    #[test]
    fn planar_two_link_values() {
        assert!((manipulability(&planar_jac(FRAC_PI_2)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(manipulability(&planar_jac(0.0)).unwrap(), 0.0);
        assert_eq!(manipulability(&DMatrix::identity(3, 3)).unwrap(), 1.0);
    }

    #[test]
    fn more_rows_than_joints_is_an_error() {
        assert!(matches!(
            manipulability(&DMatrix::zeros(3, 2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn diagonal_ellipsoid() {
        let e = ellipsoid(&DMatrix::from_diagonal(&DVector::from_vec(vec![
            3.0, 2.0, 1.0,
        ])))
        .unwrap();
        assert_eq!(e.singular_values.as_slice(), &[3.0, 2.0, 1.0]);
        assert!((e.axes.abs() - DMatrix::identity(3, 3)).amax() < 1e-15);
        assert!((e.volume_measure - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_ellipsoid() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let e = ellipsoid(&j).unwrap();
        assert!(e.min_singular_value() < 1e-12);
        assert_eq!(e.volume_measure, 0.0);
    }

    #[test]
    fn gradient_matches_analytic_two_link() {
        let chain = KinematicChain::planar(&[1.0, 1.0]).unwrap();
        let g = manipulability_gradient(
            &chain,
            &chain.config(&[0.2, FRAC_PI_2]).unwrap(),
            TaskSpace::planar(),
        )
        .unwrap();
        assert!(g.gradient[1].abs() < 1e-12);
        assert!(g.gradient[0].abs() < 1e-12);
        let g = manipulability_gradient(
            &chain,
            &chain.config(&[0.2, FRAC_PI_4]).unwrap(),
            TaskSpace::planar(),
        )
        .unwrap();
        assert!((g.gradient[1] - FRAC_PI_4.cos()).abs() < 1e-12);
        assert!(!g.degenerate);
    }

    #[test]
    fn log_cost_two_link() {
        let chain = KinematicChain::planar(&[1.0, 1.0]).unwrap();
        let params = SingularityCostParams::new(1.0, 1e-4).unwrap();
        let c = singularity_cost(
            &chain,
            &chain.config(&[0.0, FRAC_PI_4]).unwrap(),
            &params,
            TaskSpace::planar(),
        )
        .unwrap();
        assert!((c.dh_dq[1] + 1.0).abs() < 1e-12);
        assert!((c.h - (1.0 / FRAC_PI_4.sin()).ln()).abs() < 1e-12);

        let c = singularity_cost(
            &chain,
            &chain.config(&[0.0, FRAC_PI_2]).unwrap(),
            &params,
            TaskSpace::planar(),
        )
        .unwrap();
        assert!(c.h.abs() < 1e-12);
    }

    #[test]
    fn singular_config_is_finite_and_flagged() {
        let chain = KinematicChain::planar(&[1.0, 1.0]).unwrap();
        let params = SingularityCostParams::new(1.0, 1e-4).unwrap();
        let c = singularity_cost(
            &chain,
            &chain.config(&[0.0, 0.0]).unwrap(),
            &params,
            TaskSpace::planar(),
        )
        .unwrap();
        assert!(c.degenerate);
        assert!((c.h - (1.0 / LAMBDA_FLOOR).ln()).abs() < 1e-9);
        assert!(c.dh_dq.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn classification_boundaries() {
        let params = SingularityCostParams::new(2.0, 1e-4).unwrap();
        let t = params.near_singular_threshold;
        assert_eq!(
            classify_configuration(0.0, &params),
            SingularityClass::NearlySingular
        );
        assert_eq!(
            classify_configuration(t, &params),
            SingularityClass::NotNearlySingular
        );
        assert_eq!(
            classify_configuration(2.0, &params),
            SingularityClass::NotNearlySingular
        );
    }

    #[test]
    fn likelihood_values() {
        assert_eq!(likelihood(0.0, 1e-2), 1.0);
        let s: f64 = 1e-2;
        let h = (2.0 * s).sqrt();
        assert!((likelihood(h, s) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(likelihood(0.1, s) > likelihood(0.2, s));
        assert!(likelihood(-0.1, s) > likelihood(0.2, s));
    }

    #[test]
    fn params_ordering_enforced() {
        assert!(SingularityCostParams::new(1.0, 0.0).is_err());
        let mut p = SingularityCostParams::new(1.0, 1.0).unwrap();
        p.near_singular_threshold = 2.0;
        assert!(p.validate().is_err());
    }
}
