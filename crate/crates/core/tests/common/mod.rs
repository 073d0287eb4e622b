#![allow(dead_code)]

use std::path::PathBuf;

use manip_planner::factor_graph::{Factor, FactorGraph};
use manip_planner::gp_prior::{
    init_trajectory, process_covariance, transition, GpPriorParams, SupportTrajectory,
};
use manip_planner::kinematics::{JointConfig, KinematicChain};
use manip_planner::scenario::{Problem, Scenario};
use nalgebra::{DMatrix, DVector, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn ur10() -> KinematicChain {
    KinematicChain::load(crate_dir().join("models/ur10.json")).unwrap()
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(crate_dir().join("scenarios").join(format!("{name}.json"))).unwrap()
}

pub fn problem(name: &str) -> Problem {
    scenario(name).resolve().unwrap()
}

pub fn random_configs(n: usize, count: usize, seed: u64) -> Vec<JointConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            JointConfig::new(
                (0..n)
                    .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                    .collect(),
            )
            .unwrap()
        })
        .collect()
}

/// Plain homogeneous-matrix DH product, written independently of the crate.
pub fn dh_oracle(chain: &KinematicChain, q: &[f64]) -> Vec<Matrix4<f64>> {
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&chain.base_pose.rotation);
    t.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&chain.base_pose.position);
    let mut out = vec![t];
    for (link, &qi) in chain.links.iter().zip(q) {
        let th = qi + link.theta_offset;
        let (ct, st) = (th.cos(), th.sin());
        let (ca, sa) = (link.alpha.cos(), link.alpha.sin());
        #[rustfmt::skip]
        let a = Matrix4::new(
            ct, -st * ca,  st * sa, link.a * ct,
            st,  ct * ca, -ct * sa, link.a * st,
            0.0,      sa,       ca, link.d,
            0.0,     0.0,      0.0, 1.0,
        );
        t *= a;
        out.push(t);
    }
    out
}

/// Central differences of a matrix-valued function of q.
pub fn fd_matrix(f: impl Fn(&[f64]) -> DMatrix<f64>, q: &[f64], k: usize, h: f64) -> DMatrix<f64> {
    let mut qp = q.to_vec();
    let mut qm = q.to_vec();
    qp[k] += h;
    qm[k] -= h;
    (f(&qp) - f(&qm)) / (2.0 * h)
}

pub fn phi(t: f64, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = t;
    }
    m
}

/// `∫_0^upper Φ(a − s) L Qc Lᵀ Φ(b − s)ᵀ ds` by composite Simpson. The
/// integrand is quadratic in s, so this is exact up to rounding.
pub fn noise_integral(a: f64, b: f64, upper: f64, qc: &DMatrix<f64>) -> DMatrix<f64> {
    let n = qc.nrows();
    let mut lql = DMatrix::zeros(2 * n, 2 * n);
    lql.view_mut((n, n), (n, n)).copy_from(qc);
    let f = |s: f64| phi(a - s, n) * &lql * phi(b - s, n).transpose();
    let panels = 8;
    let h = upper / panels as f64;
    let mut acc = f(0.0) + f(upper);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(k as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Kernel of the LTV-SDE started at t = 0 with covariance P0 = I.
pub fn kernel(t: f64, u: f64, qc: &DMatrix<f64>) -> DMatrix<f64> {
    let n = qc.nrows();
    phi(t, n) * phi(u, n).transpose() + noise_integral(t, u, t.min(u), qc)
}

/// Posterior mean at `tau` of the zero-mean kernel GP conditioned on exact
/// full states (stacked `[position; velocity]`) at `times`.
pub fn dense_conditional_mean(
    times: &[f64],
    states: &[DVector<f64>],
    tau: f64,
    qc: &DMatrix<f64>,
) -> DVector<f64> {
    let d = 2 * qc.nrows();
    let m = times.len();
    let mut k_tt = DMatrix::zeros(m * d, m * d);
    let mut k_star = DMatrix::zeros(d, m * d);
    let mut y = DVector::zeros(m * d);
    for (a, &ta) in times.iter().enumerate() {
        for (b, &tb) in times.iter().enumerate() {
            k_tt.view_mut((a * d, b * d), (d, d))
                .copy_from(&kernel(ta, tb, qc));
        }
        k_star
            .view_mut((0, a * d), (d, d))
            .copy_from(&kernel(tau, ta, qc));
        y.rows_mut(a * d, d).copy_from(&states[a]);
    }
    k_star * k_tt.cholesky().expect("kernel is SPD").solve(&y)
}

/// Linear graph (start prior, GP priors, prior on the last state) with its
/// least-squares solution from a dense SVD of the whitened stacked system.
pub fn linear_problem(
    dof: usize,
    states: usize,
    dt: f64,
) -> (FactorGraph, SupportTrajectory, DVector<f64>) {
    let d = 2 * dof;
    let qc = DMatrix::identity(dof, dof) * 2.0;
    let params = GpPriorParams::new(qc.clone()).unwrap();
    let start = DVector::from_fn(d, |i, _| 0.1 * i as f64);
    let end = DVector::from_fn(d, |i, _| 1.0 - 0.3 * i as f64);
    let (start_var, end_var) = (1e-4, 1e-2);

    let mut g = FactorGraph::new(states, d);
    g.add(Factor::state_prior(0, start.clone(), start_var).unwrap())
        .unwrap();
    for k in 0..states - 1 {
        g.add(Factor::gp_prior(k, k + 1, dt, &params).unwrap())
            .unwrap();
    }
    g.add(Factor::state_prior(states - 1, end.clone(), end_var).unwrap())
        .unwrap();
    let q = JointConfig::new(vec![0.0; dof]).unwrap();
    let init = init_trajectory(&q, dt * (states - 1) as f64, states).unwrap();

    let w = process_covariance(dt, &qc)
        .cholesky()
        .unwrap()
        .l()
        .try_inverse()
        .unwrap();
    let rows = d * (states + 1);
    let mut a = DMatrix::zeros(rows, d * states);
    let mut b = DVector::zeros(rows);
    let ws = 1.0 / f64::sqrt(start_var);
    let we = 1.0 / f64::sqrt(end_var);
    a.view_mut((0, 0), (d, d))
        .copy_from(&(DMatrix::identity(d, d) * ws));
    b.rows_mut(0, d).copy_from(&(&start * ws));
    for k in 0..states - 1 {
        let r = d * (k + 1);
        a.view_mut((r, d * k), (d, d))
            .copy_from(&(&w * transition(dt, dof)));
        a.view_mut((r, d * (k + 1)), (d, d)).copy_from(&(-&w));
    }
    let r = d * states;
    a.view_mut((r, d * (states - 1)), (d, d))
        .copy_from(&(DMatrix::identity(d, d) * we));
    b.rows_mut(r, d).copy_from(&(&end * we));
    let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
    (g, init, x)
}
