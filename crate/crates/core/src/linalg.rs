//! Small dense linear-algebra helpers shared by the filter and Riccati code.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue tolerance for positive semidefiniteness checks.
pub const TOL_PSD: f64 = 1e-9;
/// Minimum Cholesky pivot accepted for positive definiteness.
pub const TOL_PD: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_square(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !is_square(m) {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= rel_tol * scale
}

pub fn eigenvalues_sym(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    eigenvalues_sym(m).max()
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    eigenvalues_sym(m).min()
}

/// PSD test with eigenvalues allowed down to `-TOL_PSD * max(|λ|)`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if !is_symmetric(m, 1e-10) {
        return false;
    }
    if m.is_empty() {
        return true;
    }
    let ev = eigenvalues_sym(m);
    let scale = ev.amax().max(f64::MIN_POSITIVE);
    ev.min() >= -TOL_PSD * scale
}

/// Cholesky factorization that also rejects pivots below [`TOL_PD`].
pub fn cholesky_pd(m: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if !is_symmetric(m, 1e-10) {
        return None;
    }
    let chol = Cholesky::new(symmetrize(m))?;
    let l = chol.l_dirty();
    if (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > TOL_PD) {
        Some(chol)
    } else {
        None
    }
}

/// Symmetric square root with negative eigenvalues clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&d) * v.transpose()))
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_psd_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sqrt_psd(&m);
        assert!((&s * &s - &m).norm() < 1e-12);
    }

    #[test]
    fn sqrt_clamps_tiny_negative_roundoff() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-15]);
        let s = sqrt_psd(&m);
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn pd_threshold() {
        assert!(cholesky_pd(&DMatrix::identity(2, 2)).is_some());
        assert!(cholesky_pd(&(DMatrix::identity(2, 2) * 1e-14)).is_none());
        assert!(!is_psd(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1])));
    }

    #[test]
    fn block_diag_layout() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(2, 2, 3.0);
        let d = block_diag(&[&a, &b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(2, 1)], 3.0);
    }
}
