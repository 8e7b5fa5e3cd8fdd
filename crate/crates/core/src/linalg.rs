//! Small dense helpers for the per-bin C×C Hermitian algebra.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

pub(crate) fn to_na(m: ArrayView2<Complex64>) -> DMatrix<Complex64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<Complex64>) -> Array2<Complex64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub(crate) fn real_trace(m: &DMatrix<Complex64>) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// Adds `loading * trace / C` to the diagonal. Falls back to an absolute
/// `loading` when the trace is not positive.
pub(crate) fn diagonal_load(m: &DMatrix<Complex64>, loading: f64) -> DMatrix<Complex64> {
    let c = m.nrows();
    let tr = real_trace(m);
    let eps = if tr > 0.0 {
        loading * tr / c as f64
    } else {
        loading
    };
    let mut out = m.clone();
    for i in 0..c {
        out[(i, i)] += Complex64::new(eps, 0.0);
    }
    out
}

pub(crate) fn hermitize(m: &mut DMatrix<Complex64>) {
    let c = m.nrows();
    for i in 0..c {
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..c {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

/// Inverse and log-determinant of a Hermitian positive definite matrix.
pub(crate) fn hpd_inverse(m: &DMatrix<Complex64>) -> Option<(DMatrix<Complex64>, f64)> {
    let chol = m.clone().cholesky()?;
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.re.ln())
            .sum::<f64>();
    let inv = chol.inverse();
    if !logdet.is_finite() || inv.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return None;
    }
    Some((inv, logdet))
}

/// Solves `a x = b` for Hermitian positive definite `a`.
pub(crate) fn hpd_solve(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
) -> Option<DMatrix<Complex64>> {
    let chol = a.clone().cholesky()?;
    let x = chol.solve(b);
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return None;
    }
    Some(x)
}

/// `zᴴ M z` for a row-major C×C matrix, real part only.
#[inline]
pub(crate) fn quad_form(m: &[Complex64], z: &[Complex64]) -> f64 {
    let c = z.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..c {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..c {
            row += m[i * c + j] * z[j];
        }
        acc += z[i].conj() * row;
    }
    acc.re
}

pub(crate) fn row_major(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    let c = m.nrows();
    let mut out = Vec::with_capacity(c * m.ncols());
    for i in 0..c {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(4.0, 0.0),
        ]));
        let (inv, logdet) = hpd_inverse(&m).unwrap();
        assert!((inv[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((inv[(1, 1)].re - 0.25).abs() < 1e-15);
        assert!((logdet - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let m = DMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert!(hpd_inverse(&m).is_none());
    }

    #[test]
    fn quad_form_matches_matrix_product() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.5, 0.5),
                Complex64::new(0.5, -0.5),
                Complex64::new(3.0, 0.0),
            ],
        );
        let z = [Complex64::new(1.0, 1.0), Complex64::new(-0.5, 2.0)];
        let zv = nalgebra::DVector::from_row_slice(&z);
        let expect = (zv.adjoint() * &m * &zv)[(0, 0)].re;
        assert!((quad_form(&row_major(&m), &z) - expect).abs() < 1e-12);
    }
}
