//! Small dense/sparse helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Compressed sparse row copy of a dense matrix, used for the hot matrix-vector
/// products. Results equal the dense products up to summation order.
#[derive(Debug, Clone)]
pub(crate) struct SparseRows {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let (nrows, ncols) = m.shape();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..nrows {
            for j in 0..ncols {
                let v = m[(i, j)];
                if v != 0.0 {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// `y = B x` where `x` is read from `x[..ncols]`.
    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        debug_assert!(x.len() >= self.ncols && y.len() >= self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.col_idx[p]];
            }
            y[i] = acc;
        }
    }

    /// `y += alpha * Bᵀ x`.
    pub fn mul_t_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert!(x.len() >= self.nrows && y.len() >= self.ncols);
        for i in 0..self.nrows {
            let xi = alpha * x[i];
            if xi == 0.0 {
                continue;
            }
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[p]] += self.vals[p] * xi;
            }
        }
    }
}

/// Upper estimate of the largest eigenvalue of a symmetric positive semidefinite
/// operator of order `n`.
///
/// Runs power iteration (at most 200 steps, stopping once the eigen-residual
/// `‖Bv − ρv‖` drops below `1e-10·ρ`) and returns the Rayleigh quotient plus
/// that residual. The result bounds the dominant eigenvalue once the iteration
/// has locked onto it.
pub(crate) fn max_eigenvalue_bound(n: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    if n == 0 {
        return 0.0;
    }
    // fixed, non-symmetric start so structured operators (difference stencils)
    // do not hide their dominant mode
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919 + 13) % 17) as f64 / 17.0);
    v /= v.norm();
    let mut bound = 0.0;
    for _ in 0..200 {
        let w = apply(&v);
        let rho = v.dot(&w);
        let residual = (&w - &v * rho).norm();
        bound = rho + residual;
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        if residual <= 1e-10 * rho.abs() {
            break;
        }
        v = w / wn;
    }
    bound
}

pub(crate) fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
