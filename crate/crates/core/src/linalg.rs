//! Small dense linear-algebra helpers shared by the estimation, Riccati and
//! sampling code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Absolute tolerance on `max |M - Mᵀ|` for symmetry checks, scaled by `1 + max |M|`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative tolerance on the smallest eigenvalue for definiteness checks.
pub const DEFINITENESS_TOL: f64 = 1e-12;

/// Returns `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = 1.0 + m.amax();
    (m - m.transpose()).amax() <= SYMMETRY_TOL * scale
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    (lo, hi)
}

/// `λ_min > tol · (1 + λ_max)`.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let (lo, hi) = eigen_range(m);
    lo > DEFINITENESS_TOL * (1.0 + hi.abs())
}

/// `λ_min ≥ -tol · (1 + λ_max)`.
pub fn is_positive_semidefinite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let (lo, hi) = eigen_range(m);
    lo >= -DEFINITENESS_TOL * (1.0 + hi.abs())
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
/// Returns `None` when the factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))?;
    Some(symmetrize(&chol.inverse()))
}

/// Solves `M X = B` for symmetric positive-definite `M`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))?;
    Some(chol.solve(b))
}

/// A square-root factor `F` with `F Fᵀ = M` for a symmetric positive
/// semi-definite `M`. Cholesky when it succeeds, otherwise the eigen square
/// root with negative eigenvalues clipped to zero.
pub fn sqrt_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if let Some(chol) = nalgebra::Cholesky::new(sym.clone()) {
        return chol.l();
    }
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Stacks matrices vertically. All blocks must share the column count.
pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Stacks matrices horizontally. All blocks must share the row count.
pub fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut d = 0;
    for b in blocks {
        out.view_mut((d, d), (b.nrows(), b.ncols())).copy_from(b);
        d += b.nrows();
    }
    out
}

/// Concatenates vectors.
pub fn vconcat(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// `xᵀ M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Largest absolute entry of `a - b` divided by `max(1, |b|_∞)`.
pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_shapes() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 1, &[3.0]);
        let v = vstack(&[a.clone(), b.clone()]);
        assert_eq!(v.shape(), (3, 1));
        assert_eq!(v[(2, 0)], 3.0);
        let d = block_diag(&[DMatrix::identity(2, 2), b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(2, 2)], 3.0);
        assert_eq!(d[(0, 2)], 0.0);
        let h = hstack(&[a.transpose(), DMatrix::from_element(1, 1, 5.0)]);
        assert_eq!(h.shape(), (1, 3));
    }

    #[test]
    fn definiteness() {
        assert!(is_positive_definite(&DMatrix::identity(3, 3)));
        assert!(!is_positive_definite(&DMatrix::zeros(1, 1)));
        assert!(is_positive_semidefinite(&DMatrix::zeros(2, 2)));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!is_positive_semidefinite(&indefinite));
    }

    #[test]
    fn sqrt_factor_reproduces_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = sqrt_factor(&m);
        assert!((&f * f.transpose() - &m).amax() < 1e-12);
        // singular PSD falls back to the eigen root
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = sqrt_factor(&s);
        assert!((&f * f.transpose() - &s).amax() < 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        assert!(spd_inverse(&DMatrix::zeros(2, 2)).is_none());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let inv = spd_inverse(&m).unwrap();
        assert!((&m * inv - DMatrix::identity(2, 2)).amax() < 1e-12);
    }
}
