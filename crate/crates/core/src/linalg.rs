//! Small dense linear algebra helpers shared by the per-step solvers.
//!
//! Desk-scale systems (a few hundred unknowns) are solved with dense LU;
//! nalgebra provides the factorization, these wrappers keep the ndarray
//! field types on the caller side.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Solve `a x = b` by dense LU with partial pivoting.
pub fn solve_dense(a: &Array2<f64>, b: &Array1<f64>, step: usize) -> Result<Array1<f64>> {
    let n = b.len();
    debug_assert_eq!(a.nrows(), n);
    debug_assert_eq!(a.ncols(), n);
    let m = DMatrix::from_row_iterator(n, n, a.iter().copied());
    let rhs = DVector::from_iterator(n, b.iter().copied());
    let lu = m.lu();
    match lu.solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(Array1::from_iter(x.iter().copied())),
        _ => Err(Error::LinearSolveFailure { step }),
    }
}

/// Spectral norm of `m` with respect to the inner product `<x,y> = x' diag(w) y`,
/// estimated by power iteration on the weighted normal operator.
pub fn weighted_operator_norm(m: &Array2<f64>, w: &Array1<f64>, iters: usize) -> f64 {
    let n = w.len();
    debug_assert_eq!(m.nrows(), n);
    debug_assert_eq!(m.ncols(), n);
    // Adjoint wrt the weighted inner product: M* = D^{-1} M' D.
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0_f64;
    for _ in 0..iters {
        let mv = m.dot(&v);
        let dmv = &mv * w;
        let mtdmv = m.t().dot(&dmv);
        let next = &mtdmv / w;
        let norm_sq: f64 = next.iter().zip(w.iter()).map(|(x, wi)| wi * x * x).sum();
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        // Rayleigh quotient of M*M in the weighted metric.
        lambda = v
            .iter()
            .zip(next.iter())
            .zip(w.iter())
            .map(|((vi, ni), wi)| wi * vi * ni)
            .sum::<f64>()
            .max(0.0);
        v = next / norm;
    }
    lambda.sqrt()
}

/// Thomas algorithm for a tridiagonal system given by `(lower, diag, upper)`.
/// `lower[0]` and `upper[n-1]` are unused.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Option<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    if diag[0] == 0.0 {
        return None;
    }
    c[0] = upper.get(0).copied().unwrap_or(0.0) / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 {
            return None;
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Some(x)
}
