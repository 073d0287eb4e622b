mod common;

use common::{dense_conditional_mean, noise_integral};
use manip_planner::gp_prior::{
    gp_prior_error, interpolate, process_covariance, transition, GpPriorParams, SupportTrajectory,
    TrajectoryState,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn qc() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.8])
}

fn state(values: [f64; 4], t: f64) -> TrajectoryState {
    TrajectoryState::new(
        DVector::from_column_slice(&values[..2]),
        DVector::from_column_slice(&values[2..]),
        t,
    )
    .unwrap()
}

#[test]
fn process_covariance_matches_quadrature() {
    let qc = qc();
    for dt in [0.01, 0.3, 1.0, 2.5] {
        let q = process_covariance(dt, &qc);
        let oracle = noise_integral(dt, dt, dt, &qc);
        assert!((q - &oracle).amax() < 1e-12 * oracle.amax().max(1.0));
    }
}

#[test]
fn interpolation_matches_dense_conditioning() {
    let qc = qc();
    let params = GpPriorParams::new(qc.clone()).unwrap();
    let times = [0.0, 0.4, 0.8, 1.2, 1.6];
    let values = [
        [0.1, -0.2, 0.5, 0.0],
        [0.3, 0.1, 0.2, 0.4],
        [0.2, 0.5, -0.3, 0.6],
        [-0.1, 0.4, -0.2, -0.5],
        [0.0, 0.0, 0.3, 0.1],
    ];
    let states: Vec<_> = values
        .iter()
        .zip(times)
        .map(|(v, t)| state(*v, t))
        .collect();
    let stacked: Vec<_> = states.iter().map(TrajectoryState::stacked).collect();
    for tau in [0.05, 0.2, 0.37, 0.5, 0.9, 1.1, 1.3, 1.55] {
        let dense = dense_conditional_mean(&times, &stacked, tau, &qc);
        let seg = times.iter().rposition(|&t| t <= tau).unwrap();
        let sparse = interpolate(&states[seg], &states[seg + 1], tau, &params).unwrap();
        let err = (sparse.state.stacked() - &dense).amax();
        assert!(err < 1e-8, "tau {tau}: {err}");
    }
}

#[test]
fn exact_at_knots() {
    let params = GpPriorParams::new(qc()).unwrap();
    let a = state([0.1, -0.2, 0.5, 0.0], 1.0);
    let b = state([0.3, 0.1, 0.2, 0.4], 1.7);
    let at_a = interpolate(&a, &b, 1.0, &params).unwrap().state.stacked();
    let at_b = interpolate(&a, &b, 1.7, &params).unwrap().state.stacked();
    assert!((at_a - a.stacked()).amax() < 1e-12);
    assert!((at_b - b.stacked()).amax() < 1e-12);
}

#[test]
fn out_of_range_tau_is_rejected() {
    let params = GpPriorParams::new(qc()).unwrap();
    let a = state([0.0; 4], 0.0);
    let b = state([0.0; 4], 1.0);
    assert!(interpolate(&a, &b, 1.5, &params).is_err());
    assert!(interpolate(&b, &a, 0.5, &params).is_err());
}

#[test]
fn transition_composes() {
    let (a, b) = (0.3, 0.45);
    assert!((transition(a, 3) * transition(b, 3) - transition(a + b, 3)).amax() < 1e-15);
}

#[test]
fn uneven_spacing_is_rejected() {
    let s = |t| state([0.0; 4], t);
    assert!(SupportTrajectory::new(vec![s(0.0), s(1.0), s(2.5)], 0).is_err());
    assert!(SupportTrajectory::new(vec![s(0.0), s(1.0), s(2.0)], 0).is_ok());
}

proptest! {
    #[test]
    fn constant_velocity_motion_is_interpolated_exactly(
        p in prop::array::uniform2(-2.0f64..2.0),
        v in prop::array::uniform2(-2.0f64..2.0),
        dt in 0.05f64..3.0,
        frac in 0.0f64..1.0,
    ) {
        let params = GpPriorParams::new(qc()).unwrap();
        let a = state([p[0], p[1], v[0], v[1]], 0.0);
        let b = state([p[0] + v[0] * dt, p[1] + v[1] * dt, v[0], v[1]], dt);
        let tau = frac * dt;
        let got = interpolate(&a, &b, tau, &params).unwrap().state;
        prop_assert!((got.position[0] - (p[0] + v[0] * tau)).abs() < 1e-9);
        prop_assert!((got.position[1] - (p[1] + v[1] * tau)).abs() < 1e-9);
        prop_assert!((got.velocity[0] - v[0]).abs() < 1e-9);
        let e = gp_prior_error(&a, &b, &params).unwrap();
        prop_assert!(e.residual.amax() < 1e-12);
    }

    #[test]
    fn information_is_inverse_covariance(dt in 0.01f64..5.0) {
        let params = GpPriorParams::new(qc()).unwrap();
        let e = gp_prior_error(&state([0.0; 4], 0.0), &state([0.0; 4], dt), &params).unwrap();
        let info = e.info_sqrt.transpose() * &e.info_sqrt;
        let q = process_covariance(dt, &params.qc);
        prop_assert!((info * q - DMatrix::identity(4, 4)).amax() < 1e-8);
    }
}
