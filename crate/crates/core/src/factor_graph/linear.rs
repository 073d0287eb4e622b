//! Normal-equation assembly over per-state blocks.
//!
//! Trajectory factors only couple neighbouring support states, so the
//! system is block tridiagonal and is factored block by block. Any other
//! sparsity pattern falls back to a dense Cholesky.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BlockSystem {
    block_dim: usize,
    diag: Vec<DMatrix<f64>>,
    /// Upper blocks `H[(a, b)]`, `a < b`.
    upper: BTreeMap<(usize, usize), DMatrix<f64>>,
    rhs: Vec<DVector<f64>>,
}

impl BlockSystem {
    pub fn new(num_blocks: usize, block_dim: usize) -> Self {
        Self {
            block_dim,
            diag: vec![DMatrix::zeros(block_dim, block_dim); num_blocks],
            upper: BTreeMap::new(),
            rhs: vec![DVector::zeros(block_dim); num_blocks],
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.num_blocks() * self.block_dim
    }

    /// Accumulates `JᵀJ` and `Jᵀr` for one factor with per-block Jacobians.
    pub fn add_factor(&mut self, residual: &DVector<f64>, jacobians: &[(usize, DMatrix<f64>)]) {
        for (a, ja) in jacobians {
            self.rhs[*a] += ja.transpose() * residual;
            for (b, jb) in jacobians {
                if a == b {
                    self.diag[*a] += ja.transpose() * jb;
                } else if a < b {
                    *self
                        .upper
                        .entry((*a, *b))
                        .or_insert_with(|| DMatrix::zeros(self.block_dim, self.block_dim)) +=
                        ja.transpose() * jb;
                }
            }
        }
    }

    /// `Jᵀr`.
    pub fn gradient(&self) -> DVector<f64> {
        let d = self.block_dim;
        let mut g = DVector::zeros(self.dim());
        for (k, r) in self.rhs.iter().enumerate() {
            g.rows_mut(k * d, d).copy_from(r);
        }
        g
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let d = self.block_dim;
        let mut out = DVector::zeros(self.dim());
        for (k, block) in self.diag.iter().enumerate() {
            out.rows_mut(k * d, d).copy_from(&block.diagonal());
        }
        out
    }

    pub fn is_block_tridiagonal(&self) -> bool {
        self.upper.keys().all(|&(a, b)| b == a + 1)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.block_dim;
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for (k, block) in self.diag.iter().enumerate() {
            h.view_mut((k * d, k * d), (d, d)).copy_from(block);
        }
        for (&(a, b), block) in &self.upper {
            h.view_mut((a * d, b * d), (d, d)).copy_from(block);
            h.view_mut((b * d, a * d), (d, d))
                .copy_from(&block.transpose());
        }
        h
    }

    /// Solves `(H + diag(damping)) δ = −Jᵀr`.
    pub fn solve(&self, damping: &DVector<f64>) -> Result<DVector<f64>> {
        if self.is_block_tridiagonal() {
            self.solve_tridiagonal(damping)
        } else {
            self.solve_dense(damping)
        }
    }

    pub fn solve_dense(&self, damping: &DVector<f64>) -> Result<DVector<f64>> {
        let mut h = self.to_dense();
        for (i, v) in damping.iter().enumerate() {
            h[(i, i)] += v;
        }
        let chol = Cholesky::new(h)
            .ok_or_else(|| Error::LinearSolve("normal equations not positive definite".into()))?;
        Ok(-chol.solve(&self.gradient()))
    }

    fn solve_tridiagonal(&self, damping: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.block_dim;
        let nb = self.num_blocks();
        let zero = DMatrix::zeros(d, d);
        let mut lower: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(nb.saturating_sub(1));

        for k in 0..nb {
            let mut schur = self.diag[k].clone();
            for i in 0..d {
                schur[(i, i)] += damping[k * d + i];
            }
            if k > 0 {
                let e: &DMatrix<f64> = &sub[k - 1];
                schur -= e * e.transpose();
            }
            let l = Cholesky::new(schur)
                .ok_or_else(|| {
                    Error::LinearSolve(format!(
                        "block {k} of normal equations not positive definite"
                    ))
                })?
                .unpack();
            if k + 1 < nb {
                let coupling = self.upper.get(&(k, k + 1)).unwrap_or(&zero);
                let e = l
                    .solve_lower_triangular(coupling)
                    .ok_or_else(|| Error::LinearSolve("singular block factor".into()))?
                    .transpose();
                sub.push(e);
            }
            lower.push(l);
        }

        let mut y: Vec<DVector<f64>> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut b = -&self.rhs[k];
            if k > 0 {
                b -= &sub[k - 1] * &y[k - 1];
            }
            y.push(
                lower[k]
                    .solve_lower_triangular(&b)
                    .ok_or_else(|| Error::LinearSolve("singular block factor".into()))?,
            );
        }
        let mut x = vec![DVector::zeros(d); nb];
        for k in (0..nb).rev() {
            let mut b = y[k].clone();
            if k + 1 < nb {
                b -= sub[k].transpose() * &x[k + 1];
            }
            x[k] = lower[k]
                .tr_solve_lower_triangular(&b)
                .ok_or_else(|| Error::LinearSolve("singular block factor".into()))?;
        }

        let mut out = DVector::zeros(self.dim());
        for (k, xk) in x.iter().enumerate() {
            out.rows_mut(k * d, d).copy_from(xk);
        }
        Ok(out)
    }
}
