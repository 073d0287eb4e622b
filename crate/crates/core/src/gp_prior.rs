//! Constant-velocity (white-noise-on-acceleration) Gaussian-process prior.
//!
//! The Markov state is `x = [θ; θ̇]`, driven by `ẍ = w(t)` with
//! `E[w(t) w(t')ᵀ] = Q_c δ(t − t')`. Closed forms used throughout:
//!
//! ```text
//! Φ(Δ) = [[I, Δ·I], [0, I]]
//! Q(Δ) = [[Δ³/3·Q_c, Δ²/2·Q_c], [Δ²/2·Q_c, Δ·Q_c]]
//! Λ(τ) = Φ(τ − t_i) − Q(τ − t_i) Φ(t_j − τ)ᵀ Q(Δ)⁻¹ Φ(Δ)
//! Ψ(τ) = Q(τ − t_i) Φ(t_j − τ)ᵀ Q(Δ)⁻¹
//! ```
//!
//! with `Δ = t_j − t_i`. The interpolated state is `x_τ = Λ x_i + Ψ x_j`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kinematics::JointConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub time: f64,
}

impl TrajectoryState {
    pub fn new(position: DVector<f64>, velocity: DVector<f64>, time: f64) -> Result<Self> {
        if position.len() != velocity.len() {
            return Err(Error::Dimension {
                expected: position.len(),
                actual: velocity.len(),
                context: "state velocity",
            });
        }
        if !position
            .iter()
            .chain(velocity.iter())
            .all(|v| v.is_finite())
            || !time.is_finite()
        {
            return Err(Error::Input(
                "trajectory state has non-finite entries".into(),
            ));
        }
        Ok(Self {
            position,
            velocity,
            time,
        })
    }

    pub fn dof(&self) -> usize {
        self.position.len()
    }

    /// `[θ; θ̇]`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dof();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.position);
        x.rows_mut(n, n).copy_from(&self.velocity);
        x
    }

    pub fn from_stacked(x: &DVector<f64>, time: f64) -> Self {
        let n = x.len() / 2;
        Self {
            position: x.rows(0, n).into_owned(),
            velocity: x.rows(n, n).into_owned(),
            time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpPriorParams {
    /// Power-spectral density `Q_c` (n×n, SPD).
    pub qc: DMatrix<f64>,
}

impl GpPriorParams {
    pub fn new(qc: DMatrix<f64>) -> Result<Self> {
        if !qc.is_square() || (&qc - qc.transpose()).amax() > 1e-12 * qc.amax().max(1.0) {
            return Err(Error::Input("Q_c must be square and symmetric".into()));
        }
        if Cholesky::new(qc.clone()).is_none() {
            return Err(Error::Input("Q_c must be positive definite".into()));
        }
        Ok(Self { qc })
    }

    /// `Q_c = scale · I`.
    pub fn isotropic(dof: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dof, dof) * scale)
    }

    pub fn dof(&self) -> usize {
        self.qc.nrows()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.dof()
    }
}

pub fn transition(dt: f64, dof: usize) -> DMatrix<f64> {
    let mut phi = DMatrix::identity(2 * dof, 2 * dof);
    for k in 0..dof {
        phi[(k, dof + k)] = dt;
    }
    phi
}

pub fn process_covariance(dt: f64, qc: &DMatrix<f64>) -> DMatrix<f64> {
    let n = qc.nrows();
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    q.view_mut((0, 0), (n, n))
        .copy_from(&(qc * (dt.powi(3) / 3.0)));
    q.view_mut((0, n), (n, n))
        .copy_from(&(qc * (dt.powi(2) / 2.0)));
    q.view_mut((n, 0), (n, n))
        .copy_from(&(qc * (dt.powi(2) / 2.0)));
    q.view_mut((n, n), (n, n)).copy_from(&(qc * dt));
    q
}

fn cholesky(q: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(q).ok_or_else(|| Error::LinearSolve("process covariance is not SPD".into()))
}

/// Square-root information `L⁻¹` with `Q = L Lᵀ`, so `‖L⁻¹ r‖² = rᵀ Q⁻¹ r`.
pub fn prior_sqrt_information(dt: f64, params: &GpPriorParams) -> Result<DMatrix<f64>> {
    let chol = cholesky(process_covariance(dt, &params.qc))?;
    let l = chol.l();
    let dim = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(dim, dim))
        .ok_or_else(|| Error::LinearSolve("singular Cholesky factor".into()))
}

#[derive(Debug, Clone)]
pub struct GpPriorError {
    pub residual: DVector<f64>,
    pub jac_i: DMatrix<f64>,
    pub jac_j: DMatrix<f64>,
    pub info_sqrt: DMatrix<f64>,
}

/// Unwhitened residual `Φ(Δt) x_i − x_j` with its Jacobians and noise model.
pub fn gp_prior_error(
    xi: &TrajectoryState,
    xj: &TrajectoryState,
    params: &GpPriorParams,
) -> Result<GpPriorError> {
    let dt = xj.time - xi.time;
    if !(dt > 0.0) {
        return Err(Error::Ordering(format!(
            "GP prior needs t_j > t_i, got {} -> {}",
            xi.time, xj.time
        )));
    }
    check_dof(xi, params)?;
    check_dof(xj, params)?;
    let phi = transition(dt, params.dof());
    let dim = params.state_dim();
    Ok(GpPriorError {
        residual: &phi * xi.stacked() - xj.stacked(),
        jac_i: phi,
        jac_j: -DMatrix::identity(dim, dim),
        info_sqrt: prior_sqrt_information(dt, params)?,
    })
}

fn check_dof(x: &TrajectoryState, params: &GpPriorParams) -> Result<()> {
    if x.dof() != params.dof() {
        return Err(Error::Dimension {
            expected: params.dof(),
            actual: x.dof(),
            context: "trajectory state vs Q_c",
        });
    }
    Ok(())
}

/// `(Λ, Ψ)` for a query at offset `s = τ − t_i` inside a segment of length `dt`.
pub fn interpolation_coefficients(
    dt: f64,
    s: f64,
    params: &GpPriorParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::Ordering(format!(
            "segment length {dt} must be positive"
        )));
    }
    if !(0.0..=dt).contains(&s) {
        return Err(Error::Range(format!(
            "interpolation offset {s} outside segment [0, {dt}]"
        )));
    }
    let n = params.dof();
    let dim = 2 * n;
    if s == 0.0 {
        return Ok((DMatrix::identity(dim, dim), DMatrix::zeros(dim, dim)));
    }
    if s == dt {
        return Ok((DMatrix::zeros(dim, dim), DMatrix::identity(dim, dim)));
    }
    let q_tau = process_covariance(s, &params.qc);
    let chol = cholesky(process_covariance(dt, &params.qc))?;
    // Ψ = Q_τ Φ(Δ − s)ᵀ Q⁻¹; Q symmetric so Ψᵀ = Q⁻¹ Φ(Δ − s) Q_τ.
    let psi = chol.solve(&(transition(dt - s, n) * &q_tau)).transpose();
    let lambda = transition(s, n) - &psi * transition(dt, n);
    Ok((lambda, psi))
}

#[derive(Debug, Clone)]
pub struct Interpolation {
    pub state: TrajectoryState,
    pub lambda: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

/// GP posterior mean at `tau ∈ [t_i, t_j]` given the two bracketing states.
pub fn interpolate(
    xi: &TrajectoryState,
    xj: &TrajectoryState,
    tau: f64,
    params: &GpPriorParams,
) -> Result<Interpolation> {
    check_dof(xi, params)?;
    check_dof(xj, params)?;
    if !(xj.time > xi.time) {
        return Err(Error::Ordering(format!(
            "interpolation needs t_j > t_i, got {} -> {}",
            xi.time, xj.time
        )));
    }
    if !(xi.time..=xj.time).contains(&tau) {
        return Err(Error::Range(format!(
            "tau {tau} outside [{}, {}]",
            xi.time, xj.time
        )));
    }
    let (lambda, psi) = interpolation_coefficients(xj.time - xi.time, tau - xi.time, params)?;
    let x = &lambda * xi.stacked() + &psi * xj.stacked();
    Ok(Interpolation {
        state: TrajectoryState::from_stacked(&x, tau),
        lambda,
        psi,
    })
}

/// Support states at uniformly spaced knot times. `n_interp` interpolated
/// query points are placed evenly inside every segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportTrajectory {
    pub states: Vec<TrajectoryState>,
    pub n_interp: usize,
}

impl SupportTrajectory {
    pub fn new(states: Vec<TrajectoryState>, n_interp: usize) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::Input(
                "trajectory needs at least two support states".into(),
            ));
        }
        let dof = states[0].dof();
        if let Some(bad) = states.iter().find(|s| s.dof() != dof) {
            return Err(Error::Dimension {
                expected: dof,
                actual: bad.dof(),
                context: "support state",
            });
        }
        let dt = states[1].time - states[0].time;
        for w in states.windows(2) {
            let step = w[1].time - w[0].time;
            if !(step > 0.0) {
                return Err(Error::Ordering(
                    "support times must strictly increase".into(),
                ));
            }
            if (step - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::Input(
                    "support times must be uniformly spaced".into(),
                ));
            }
        }
        Ok(Self { states, n_interp })
    }

    pub fn dof(&self) -> usize {
        self.states[0].dof()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.dof()
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    /// Offsets `k/(count+1)·Δt`, `k = 1..=count`, of interior query points in
    /// segment `seg`.
    pub fn segment_offsets(&self, seg: usize, count: usize) -> Vec<f64> {
        let dt = self.states[seg + 1].time - self.states[seg].time;
        (1..=count)
            .map(|k| dt * k as f64 / (count + 1) as f64)
            .collect()
    }

    /// Stacked decision vector `[x_0; x_1; …]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let d = self.state_dim();
        let mut v = DVector::zeros(d * self.num_states());
        for (k, s) in self.states.iter().enumerate() {
            v.rows_mut(k * d, d).copy_from(&s.stacked());
        }
        v
    }

    pub fn with_vector(&self, v: &DVector<f64>) -> Self {
        let d = self.state_dim();
        let states = self
            .states
            .iter()
            .enumerate()
            .map(|(k, s)| TrajectoryState::from_stacked(&v.rows(k * d, d).into_owned(), s.time))
            .collect();
        Self {
            states,
            n_interp: self.n_interp,
        }
    }

    /// Support states interleaved with `per_segment` interpolated states.
    /// The flag is `true` for support states.
    pub fn dense_states(
        &self,
        per_segment: usize,
        params: &GpPriorParams,
    ) -> Result<Vec<(TrajectoryState, bool)>> {
        let mut out = Vec::with_capacity(self.num_states() + per_segment * (self.num_states() - 1));
        for seg in 0..self.num_states() - 1 {
            let (xi, xj) = (&self.states[seg], &self.states[seg + 1]);
            out.push((xi.clone(), true));
            for s in self.segment_offsets(seg, per_segment) {
                out.push((interpolate(xi, xj, xi.time + s, params)?.state, false));
            }
        }
        out.push((self.states[self.num_states() - 1].clone(), true));
        Ok(out)
    }
}

/// Stationary trajectory: `num_states` copies of `start` with zero velocity
/// at uniformly spaced times over `[0, horizon]`.
pub fn init_trajectory(
    start: &JointConfig,
    horizon: f64,
    num_states: usize,
) -> Result<SupportTrajectory> {
    if num_states < 2 {
        return Err(Error::Input("need at least two support states".into()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Input("horizon must be positive".into()));
    }
    let n = start.len();
    let states = (0..num_states)
        .map(|k| {
            TrajectoryState::new(
                start.as_vector().clone(),
                DVector::zeros(n),
                horizon * k as f64 / (num_states - 1) as f64,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SupportTrajectory::new(states, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(p: &[f64], v: &[f64], t: f64) -> TrajectoryState {
        TrajectoryState::new(DVector::from_row_slice(p), DVector::from_row_slice(v), t).unwrap()
    }

    #[test]
    fn constant_velocity_rollout_has_zero_residual() {
        let params = GpPriorParams::isotropic(2, 1e3).unwrap();
        let xi = state(&[0.1, -0.4], &[0.5, 1.5], 1.0);
        let xj = state(&[0.1 + 0.5 * 0.5, -0.4 + 1.5 * 0.5], &[0.5, 1.5], 1.5);
        let e = gp_prior_error(&xi, &xj, &params).unwrap();
        assert!(e.residual.amax() < 1e-15);
        let still = state(&[0.3, 0.2], &[0.0, 0.0], 0.0);
        let later = TrajectoryState {
            time: 2.0,
            ..still.clone()
        };
        assert_eq!(
            gp_prior_error(&still, &later, &params)
                .unwrap()
                .residual
                .amax(),
            0.0
        );
    }

    #[test]
    fn prior_rejects_unordered_times() {
        let params = GpPriorParams::isotropic(1, 1.0).unwrap();
        let a = state(&[0.0], &[0.0], 1.0);
        let b = state(&[0.0], &[0.0], 1.0);
        assert!(matches!(
            gp_prior_error(&a, &b, &params),
            Err(Error::Ordering(_))
        ));
    }

    #[test]
    fn sqrt_information_whitens_covariance() {
        let params = GpPriorParams::isotropic(3, 1e3).unwrap();
        let w = prior_sqrt_information(0.5, &params).unwrap();
        let q = process_covariance(0.5, &params.qc);
        let ident = &w * q * w.transpose();
        assert!((ident - DMatrix::identity(6, 6)).amax() < 1e-9);
    }

    #[test]
    fn interpolation_limits_and_midpoint() {
        let params = GpPriorParams::isotropic(2, 10.0).unwrap();
        let xi = state(&[0.0, 1.0], &[2.0, -1.0], 0.0);
        let xj = state(&[2.0, 0.0], &[2.0, -1.0], 1.0);
        let mid = interpolate(&xi, &xj, 0.5, &params).unwrap();
        assert!((mid.state.position - DVector::from_row_slice(&[1.0, 0.5])).amax() < 1e-12);
        assert!((mid.state.velocity - xi.velocity.clone()).amax() < 1e-12);

        let left = interpolate(&xi, &xj, 0.0, &params).unwrap();
        assert_eq!(left.state.stacked(), xi.stacked());
        let near = interpolate(&xi, &xj, 1e-9, &params).unwrap();
        assert!((near.lambda - DMatrix::identity(4, 4)).amax() < 1e-6);
        assert!(near.psi.amax() < 1e-6);

        assert!(matches!(
            interpolate(&xi, &xj, 1.5, &params),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn stationary_init() {
        let q = JointConfig::new(vec![0.1, 0.2, 0.3]).unwrap();
        let traj = init_trajectory(&q, 4.0, 5).unwrap();
        assert_eq!(traj.num_states(), 5);
        assert_eq!(traj.times(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(traj.states.iter().all(|s| s.position == *q.as_vector()));
        assert!(init_trajectory(&q, 4.0, 1).is_err());
    }

    #[test]
    fn vector_roundtrip_keeps_times() {
        let q = JointConfig::new(vec![0.1, 0.2]).unwrap();
        let traj = init_trajectory(&q, 1.0, 3).unwrap();
        let v = traj.to_vector().map(|x| x + 1.0);
        let moved = traj.with_vector(&v);
        assert_eq!(moved.times(), traj.times());
        assert_eq!(moved.to_vector(), v);
    }

    #[test]
    fn dense_states_count() {
        let params = GpPriorParams::isotropic(1, 1.0).unwrap();
        let q = JointConfig::new(vec![0.5]).unwrap();
        let traj = init_trajectory(&q, 1.0, 4).unwrap();
        let dense = traj.dense_states(3, &params).unwrap();
        assert_eq!(dense.len(), 4 + 3 * 3);
        assert_eq!(dense.iter().filter(|(_, s)| *s).count(), 4);
        assert!(dense.windows(2).all(|w| w[1].0.time > w[0].0.time));
    }
}
