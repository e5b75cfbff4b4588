//! Small dense linear-algebra helpers shared across the crate.

use alloc::string::String;
use alloc::{format, vec};
use nalgebra::{DMatrix, DVector};

/// Largest real part among the eigenvalues of a square matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Induced 2-norm (largest singular value).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Eigenvalue range of a symmetric matrix, returned as (min, max).
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.symmetric_eigenvalues();
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigen_range(m).0
}

/// Solves the Sylvester-type Lyapunov equation `Aᵀ P + P A = C` for `P` by
/// vectorization. Dimensions here are small (n ≤ a few dozen), so the dense
/// n²×n² solve is adequate.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>, String> {
    let n = a.nrows();
    if a.ncols() != n || c.nrows() != n || c.ncols() != n {
        return Err(format!(
            "lyapunov solve needs square matrices of equal size, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            c.nrows(),
            c.ncols()
        ));
    }
    // vec(AᵀP) = (I ⊗ Aᵀ) vec(P), vec(PA) = (Aᵀ ⊗ I) vec(P)
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let m = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| String::from("singular Kronecker system in Lyapunov solve"))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    // symmetrize away roundoff
    Ok((&p + p.transpose()) * 0.5)
}

/// Row rank of a matrix by singular-value thresholding.
pub fn rank_with_tol(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    m.singular_values().iter().filter(|&&s| s > tol).count()
}

/// Stacks matrices vertically; panics on column mismatch.
pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let blocks: vec::Vec<&DMatrix<f64>> = blocks.iter().filter(|b| b.nrows() > 0).collect();
    if blocks.is_empty() {
        return DMatrix::zeros(0, 0);
    }
    let ncols = blocks[0].ncols();
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut row = 0;
    for b in blocks {
        out.view_mut((row, 0), (b.nrows(), ncols)).copy_from(b);
        row += b.nrows();
    }
    out
}
