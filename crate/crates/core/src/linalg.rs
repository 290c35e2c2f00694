//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotPositiveDefinite(format!("{what}: matrix is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what}: non-finite entry")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = 1.0f64.max(m[(i, j)].abs()).max(m[(j, i)].abs());
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-10) && Cholesky::new(m.clone()).is_some()
}

pub fn log_det_from_cholesky(ch: &Cholesky<f64, Dyn>) -> f64 {
    ch.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// `eᵀ P e` for a row-major `m × m` matrix `p`.
#[inline]
pub fn quad_form(p: &[f64], m: usize, e: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), m * m);
    if m == 1 {
        return p[0] * e[0] * e[0];
    }
    let mut acc = 0.0;
    for a in 0..m {
        let mut row = 0.0;
        for b in 0..m {
            row += p[a * m + b] * e[b];
        }
        acc += e[a] * row;
    }
    acc
}

/// `xᵀ P y` for a row-major `m × m` matrix `p`.
#[inline]
pub fn bilinear_form(p: &[f64], m: usize, x: &[f64], y: &[f64]) -> f64 {
    if m == 1 {
        return p[0] * x[0] * y[0];
    }
    let mut acc = 0.0;
    for a in 0..m {
        let mut row = 0.0;
        for b in 0..m {
            row += p[a * m + b] * y[b];
        }
        acc += x[a] * row;
    }
    acc
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Symmetrize in place by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of an SPD matrix via its Cholesky factor, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn column(m: &DMatrix<f64>, j: usize) -> DVector<f64> {
    m.column(j).into_owned()
}
