//! Dense helpers with a fixed summation order.
//!
//! The solver hot path uses these instead of BLAS-style kernels so that every
//! output entry is a sum over the inner index in ascending order, independent
//! of the shapes involved. Decompositions go through nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// `out += a * b`.
pub fn add_mul(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(out.shape(), (a.nrows(), b.ncols()));
    let m = a.nrows();
    for j in 0..b.ncols() {
        for c in 0..a.ncols() {
            let w = b[(c, j)];
            let src = a.column(c);
            let mut dst = out.column_mut(j);
            for r in 0..m {
                dst[r] += src[r] * w;
            }
        }
    }
}

/// `a * b`.
pub fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    add_mul(&mut out, a, b);
    out
}

/// `a^T * b`, each entry a dot product over rows in ascending order.
pub fn tr_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for i in 0..a.ncols() {
        let ai = a.column(i);
        for j in 0..b.ncols() {
            let bj = b.column(j);
            let mut s = 0.0;
            for r in 0..a.nrows() {
                s += ai[r] * bj[r];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Zeroes the strictly lower triangle.
pub fn upper_triangular(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            out[(i, j)] = 0.0;
        }
    }
    out
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Descending eigenpairs of a symmetric matrix.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Sign of the first entry of largest magnitude (1 for a zero vector).
pub fn dominant_sign<'a>(col: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in col {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    sign
}

/// Flips each column so its first entry of largest magnitude is positive.
pub fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        if dominant_sign(col.iter()) < 0.0 {
            col.neg_mut();
        }
    }
}

/// Orthonormal basis of the column space via thin QR; fails when the
/// columns are numerically dependent.
pub fn orthonormal_basis(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.ncols() > m.nrows() {
        return Err(Error::RankDeficient(format!("{what}: more columns than rows")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= max * 1e-12 {
        return Err(Error::RankDeficient(format!("{what}: column space is degenerate")));
    }
    Ok(qr.q())
}

/// `m^{-1/2}` for a symmetric positive definite matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if eig.eigenvalues.iter().any(|&l| !(l > max * 1e-14)) {
        return Err(Error::RankDeficient(format!("{what}: matrix is singular")));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Ratio of largest to smallest eigenvalue of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_nalgebra() {
        let a = DMatrix::from_fn(5, 3, |r, c| (r as f64 + 1.0) * 0.3 - c as f64);
        let b = DMatrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 - 1.5);
        assert!((mul(&a, &b) - &a * &b).amax() < 1e-12);
        let c = DMatrix::from_fn(5, 2, |r, c| (r + c) as f64 * 0.1);
        assert!((tr_mul(&a, &c) - a.transpose() * &c).amax() < 1e-12);
    }

    #[test]
    fn upper_triangular_zeroes_lower() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(upper_triangular(&m), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 4.0]));
    }

    #[test]
    fn inverse_square_root() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = inv_sqrt_spd(&m, "m").unwrap();
        let id = &s * &m * &s;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(inv_sqrt_spd(&DMatrix::zeros(2, 2), "z").is_err());
    }

    #[test]
    fn basis_rejects_dependent_columns() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(orthonormal_basis(&m, "m").is_err());
    }
}
