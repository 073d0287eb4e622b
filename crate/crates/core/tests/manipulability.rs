mod common;

use common::{random_configs, ur10};
use manip_planner::kinematics::{geometric_jacobian, JointConfig, KinematicChain, TaskSpace};
use manip_planner::manipulability::{
    classify_configuration, ellipsoid, estimate_lambda_max, likelihood, manipulability,
    manipulability_gradient, singularity_cost, SingularityClass, SingularityCostParams,
};
use nalgebra::{DMatrix, Rotation3, Vector3};
use proptest::prelude::*;

fn lambda_at(chain: &KinematicChain, q: &[f64], task: TaskSpace) -> f64 {
    let j = geometric_jacobian(chain, &JointConfig::new(q.to_vec()).unwrap(), task).unwrap();
    manipulability(&j).unwrap()
}

#[test]
fn lambda_is_sqrt_det() {
    let chain = ur10();
    for q in random_configs(6, 50, 10) {
        let j = geometric_jacobian(&chain, &q, TaskSpace::position()).unwrap();
        let det = (&j * j.transpose()).determinant();
        let l = manipulability(&j).unwrap();
        assert!((l - det.max(0.0).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let chain = ur10();
    let task = TaskSpace::twist();
    let h = 1e-6;
    let mut checked = 0;
    for q in random_configs(6, 300, 11) {
        let g = manipulability_gradient(&chain, &q, task).unwrap();
        if g.lambda <= 0.01 {
            continue;
        }
        let fd: Vec<f64> = (0..6)
            .map(|k| {
                let mut qp = q.as_slice().to_vec();
                let mut qm = qp.clone();
                qp[k] += h;
                qm[k] -= h;
                (lambda_at(&chain, &qp, task) - lambda_at(&chain, &qm, task)) / (2.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let err = (0..6).fold(0.0_f64, |m, k| m.max((g.gradient[k] - fd[k]).abs()));
        assert!(err / scale < 1e-4, "relative error {}", err / scale);
        checked += 1;
    }
    assert!(checked >= 100);
}

#[test]
fn log_cost_gradient_cancels_lambda() {
    let chain = ur10();
    let params = SingularityCostParams::new(chain.lambda_max.twist.unwrap(), 1e-4).unwrap();
    for q in random_configs(6, 200, 12) {
        let g = manipulability_gradient(&chain, &q, TaskSpace::twist()).unwrap();
        if g.lambda <= 0.01 {
            continue;
        }
        let c = singularity_cost(&chain, &q, &params, TaskSpace::twist()).unwrap();
        let expected = -&g.gradient / g.lambda;
        assert!((&c.dh_dq - &expected).amax() <= 1e-10 * expected.amax().max(1e-300));
        assert!((c.h - (params.lambda_max / g.lambda).ln()).abs() < 1e-12);
    }
}

#[test]
fn two_link_lambda_is_abs_sin() {
    let chain = KinematicChain::planar(&[1.0, 1.0]).unwrap();
    for k in 1..=100 {
        let q2 = std::f64::consts::PI * k as f64 / 101.0;
        let l = lambda_at(&chain, &[0.4, q2], TaskSpace::planar());
        assert!((l - q2.sin().abs()).abs() < 1e-9);
    }
}

#[test]
fn ellipsoid_axes_reconstruct_jacobian() {
    let chain = ur10();
    for q in random_configs(6, 20, 13) {
        let j = geometric_jacobian(&chain, &q, TaskSpace::twist()).unwrap();
        let e = ellipsoid(&j).unwrap();
        // σ_k u_k are the columns of U Σ; J Jᵀ = (UΣ)(UΣ)ᵀ.
        let us = &e.axes * DMatrix::from_diagonal(&e.singular_values);
        assert!((&us * us.transpose() - &j * j.transpose()).amax() < 1e-12);
        assert!((e.volume_measure - manipulability(&j).unwrap()).abs() < 1e-12);
        let sorted = e
            .singular_values
            .as_slice()
            .windows(2)
            .all(|w| w[0] >= w[1]);
        assert!(sorted);
    }
}

#[test]
fn lambda_max_estimate_is_reproducible_and_bounds_samples() {
    let chain = ur10();
    let a = estimate_lambda_max(&chain, TaskSpace::twist(), 2000, 5).unwrap();
    let b = estimate_lambda_max(&chain, TaskSpace::twist(), 2000, 5).unwrap();
    assert_eq!(a, b);
    let cached = chain.lambda_max.twist.unwrap();
    assert!(a <= cached);
    for q in random_configs(6, 200, 14) {
        assert!(lambda_at(&chain, q.as_slice(), TaskSpace::twist()) <= cached * 1.05);
    }
}

#[test]
fn classification_and_likelihood() {
    let p = SingularityCostParams::new(2.0, 1e-2).unwrap();
    assert_eq!(
        classify_configuration(0.019, &p),
        SingularityClass::NearlySingular
    );
    assert_eq!(
        classify_configuration(0.021, &p),
        SingularityClass::NotNearlySingular
    );
    assert_eq!(likelihood(0.0, 1e-2), 1.0);
    assert!(likelihood(1.0, 1e-2) < likelihood(0.5, 1e-2));
}

#[test]
fn singular_jacobian_reports_zero() {
    let chain = KinematicChain::planar(&[1.0, 1.0]).unwrap();
    assert_eq!(lambda_at(&chain, &[0.7, 0.0], TaskSpace::planar()), 0.0);
    let g = manipulability_gradient(
        &chain,
        &JointConfig::new(vec![0.7, 0.0]).unwrap(),
        TaskSpace::planar(),
    )
    .unwrap();
    assert!(g.degenerate);
    assert!(g.gradient.iter().all(|v| v.is_finite()));
}

proptest! {
    #[test]
    fn lambda_invariant_to_task_rotation(
        q in prop::collection::vec(-3.0f64..3.0, 6),
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
    ) {
        let chain = ur10();
        let j = geometric_jacobian(&chain, &JointConfig::new(q).unwrap(), TaskSpace::position()).unwrap();
        let v = Vector3::from(axis);
        prop_assume!(v.norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(v), angle);
        let rj = DMatrix::from_iterator(3, 3, r.matrix().iter().copied()) * &j;
        let (a, b) = (manipulability(&j).unwrap(), manipulability(&rj).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 + 1e-10 * a);
    }

    #[test]
    fn lambda_invariant_to_base_joint(q in prop::collection::vec(-3.0f64..3.0, 6), dq in -3.0f64..3.0) {
        let chain = ur10();
        let mut q2 = q.clone();
        q2[0] += dq;
        let a = lambda_at(&chain, &q, TaskSpace::twist());
        let b = lambda_at(&chain, &q2, TaskSpace::twist());
        prop_assert!((a - b).abs() <= 1e-12 + 1e-10 * a);
    }
}
