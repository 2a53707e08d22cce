//! Linear-algebra kernels: banded unit-lower-triangular operations driven by
//! an AR coefficient vector, plus thin dense LAPACK wrappers with crate
//! errors.
//!
//! The coefficient matrix L of an AR(p) recursion is unit lower triangular
//! with entry (s,t) = -phi_{s-t} for 1 <= s-t <= p and zero elsewhere, so
//! products and solves against L or L' cost O(T p) per vector and never
//! require forming L densely. The dense form is still exposed for tests and
//! for the eigendecomposition paths that are genuinely dense.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{Error, Result};

/// Dense T x T AR coefficient matrix for `phi`.
pub fn ar_coeff_dense(phi: &[f64], t: usize) -> Array2<f64> {
    let mut l = Array2::<f64>::eye(t);
    for s in 0..t {
        for (j, &c) in phi.iter().enumerate() {
            let lag = j + 1;
            if s >= lag {
                l[[s, s - lag]] = -c;
            }
        }
    }
    l
}

/// Solve L x = b in place: x starts as b, forward substitution, O(T p).
pub fn solve_lower_inplace(phi: &[f64], x: &mut [f64]) {
    let p = phi.len();
    for s in 0..x.len() {
        for j in 1..=p.min(s) {
            x[s] += phi[j - 1] * x[s - j];
        }
    }
}

/// Solve L' x = b in place: backward substitution, O(T p).
pub fn solve_upper_t_inplace(phi: &[f64], x: &mut [f64]) {
    let p = phi.len();
    let n = x.len();
    for s in (0..n).rev() {
        for j in 1..=p.min(n - 1 - s) {
            x[s] += phi[j - 1] * x[s + j];
        }
    }
}

/// y = L x in place. Descending order so each x[s - j] read is the original.
pub fn apply_lower_inplace(phi: &[f64], x: &mut [f64]) {
    let p = phi.len();
    for s in (0..x.len()).rev() {
        for j in 1..=p.min(s) {
            x[s] -= phi[j - 1] * x[s - j];
        }
    }
}

/// y = L' x in place. Ascending order so each x[s + j] read is the original.
pub fn apply_upper_t_inplace(phi: &[f64], x: &mut [f64]) {
    let p = phi.len();
    let n = x.len();
    for s in 0..n {
        for j in 1..=p.min(n - 1 - s) {
            x[s] -= phi[j - 1] * x[s + j];
        }
    }
}

/// Solve L X = B column by column, in place.
pub fn solve_lower_mat(phi: &[f64], b: &mut Array2<f64>) {
    for mut col in b.columns_mut() {
        // Contiguity is not guaranteed for column views; use a scratch buffer.
        let mut v: Vec<f64> = col.iter().copied().collect();
        solve_lower_inplace(phi, &mut v);
        for (dst, src) in col.iter_mut().zip(v) {
            *dst = src;
        }
    }
}

/// Solve L' X = B column by column, in place.
pub fn solve_upper_t_mat(phi: &[f64], b: &mut Array2<f64>) {
    for mut col in b.columns_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        solve_upper_t_inplace(phi, &mut v);
        for (dst, src) in col.iter_mut().zip(v) {
            *dst = src;
        }
    }
}

/// Dense inverse of the unit-lower coefficient matrix, O(T^2 p).
pub fn unit_lower_inverse(phi: &[f64], t: usize) -> Array2<f64> {
    let mut inv = Array2::<f64>::eye(t);
    solve_lower_mat(phi, &mut inv);
    inv
}

/// Entry (i, j) of the banded SPD precision P = L' L, 0-based, O(p).
pub fn precision_entry(phi: &[f64], t: usize, i: usize, j: usize) -> f64 {
    let p = phi.len();
    let (lo, hi) = (i.max(j), (i.min(j) + p).min(t - 1));
    if lo > hi {
        return 0.0;
    }
    // Coefficient of L at (s, c): 1 on the diagonal, -phi_{s-c} within the band.
    let ell = |s: usize, c: usize| -> f64 {
        if s == c {
            1.0
        } else {
            let lag = s - c;
            if lag <= p {
                -phi[lag - 1]
            } else {
                0.0
            }
        }
    };
    (lo..=hi).map(|s| ell(s, i) * ell(s, j)).sum()
}

/// Dense precision matrix P = L' L.
pub fn precision_dense(phi: &[f64], t: usize) -> Array2<f64> {
    Array2::from_shape_fn((t, t), |(i, j)| {
        if i.abs_diff(j) > phi.len() {
            0.0
        } else {
            precision_entry(phi, t, i, j)
        }
    })
}

/// Lower Cholesky factor of an SPD matrix. `context` names the matrix in the
/// error when the factorization detects an indefinite input.
pub fn cholesky_lower(a: &ArrayView2<f64>, context: &str) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::invalid(format!("{context}: matrix not square")));
    }
    // Hand-rolled left-looking Cholesky: keeps failure reporting exact and
    // avoids copying into LAPACK layout for the small/medium factors used
    // in fold loops. Row-major sequential access keeps this cache friendly.
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::numerical(format!(
                        "{context}: not positive definite (pivot {s:.3e} at index {i})"
                    )));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve L x = b for lower-triangular L (dense, general diagonal).
pub fn tri_lower_solve_vec(l: &ArrayView2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let c = l[[i, k]];
            if c != 0.0 {
                x[i] -= c * x[k];
            }
        }
        x[i] /= l[[i, i]];
    }
    x
}

/// Solve L' x = b for lower-triangular L.
pub fn tri_lower_t_solve_vec(l: &ArrayView2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in i + 1..n {
            let c = l[[k, i]];
            if c != 0.0 {
                x[i] -= c * x[k];
            }
        }
        x[i] /= l[[i, i]];
    }
    x
}

/// Solve L X = B for lower-triangular L with a matrix right-hand side.
pub fn tri_lower_solve_mat(l: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = (b.nrows(), b.ncols());
    let mut x = b.to_owned();
    for i in 0..n {
        let (done, mut rest) = x.view_mut().split_at(Axis(0), i);
        let mut row_i = rest.row_mut(0);
        for k in 0..i {
            let c = l[[i, k]];
            if c != 0.0 {
                row_i.scaled_add(-c, &done.row(k));
            }
        }
        let d = l[[i, i]];
        row_i.mapv_inplace(|v| v / d);
        let _ = m;
    }
    x
}

/// Solve L' X = B for lower-triangular L with a matrix right-hand side.
pub fn tri_lower_t_solve_mat(l: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let n = b.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        let (mut head, rest) = x.view_mut().split_at(Axis(0), i + 1);
        let mut row_i = head.row_mut(i);
        for k in i + 1..n {
            let c = l[[k, i]];
            if c != 0.0 {
                row_i.scaled_add(-c, &rest.row(k - i - 1));
            }
        }
        let d = l[[i, i]];
        row_i.mapv_inplace(|v| v / d);
    }
    x
}

/// Inverse of an SPD matrix via Cholesky; the result is exactly symmetric.
pub fn spd_inverse(a: &ArrayView2<f64>, context: &str) -> Result<Array2<f64>> {
    let l = cholesky_lower(a, context)?;
    let eye = Array2::<f64>::eye(a.nrows());
    let half = tri_lower_solve_mat(&l.view(), &eye.view());
    let mut inv = tri_lower_t_solve_mat(&l.view(), &half.view());
    symmetrize(&mut inv);
    Ok(inv)
}

/// Solve A x = b for SPD A via Cholesky.
pub fn spd_solve_vec(a: &ArrayView2<f64>, b: &[f64], context: &str) -> Result<Vec<f64>> {
    let l = cholesky_lower(a, context)?;
    Ok(tri_lower_t_solve_vec(&l.view(), &tri_lower_solve_vec(&l.view(), b)))
}

/// log det A for SPD A given its lower Cholesky factor.
pub fn logdet_from_chol(l: &ArrayView2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

/// Symmetric eigendecomposition (ascending eigenvalues, orthonormal columns).
pub fn eigh_sym(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    a.eigh(UPLO::Lower)
        .map_err(|e| Error::numerical(format!("symmetric eigendecomposition failed: {e}")))
}

/// (A + A') / 2, forcing exact symmetry.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}
