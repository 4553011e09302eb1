//! Small dense helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Spectral power of a symmetric positive-definite matrix.
pub fn matrix_power(m: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Invalid("matrix is not positive definite".into()));
    }
    let powered = eig.eigenvalues.map(|l| l.powf(alpha));
    Ok(reassemble(&eig.eigenvectors, &powered))
}

fn reassemble(v: &DMatrix<f64>, diag: &DVector<f64>) -> DMatrix<f64> {
    let mut out = v * DMatrix::from_diagonal(diag) * v.transpose();
    symmetrize(&mut out);
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Invalid("matrix is not symmetric".into()));
            }
        }
    }
    Ok(())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    let g = m.transpose() * m;
    let eig = SymmetricEigen::new(g);
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves a small dense square system; `None` when singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = matrix_power(&m, 0.5).unwrap();
        assert!((r[(0, 0)] - 2.0).abs() < 1e-14 && (r[(1, 1)] - 3.0).abs() < 1e-14);
        assert!(r[(0, 1)].abs() < 1e-14);
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_power(&i, -0.7).unwrap() - &i).amax() < 1e-14);
    }

    #[test]
    fn power_roundtrip() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.5, 1.0, 0.2, 0.0, 0.4, 3.0]);
        let m = &a * a.transpose();
        let r = matrix_power(&matrix_power(&m, 1.0 / 3.0).unwrap(), 3.0).unwrap();
        assert!((&r - &m).amax() <= 1e-10 * m.amax());
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matrix_power(&m, 0.5).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matrix_power(&m, 0.5).is_err());
    }

    #[test]
    fn spectral_norm_matches_known() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 5.0]);
        // singular values of [[3,0],[4,5]] are sqrt(45) and sqrt(5)
        assert!((spectral_norm(&m) - 45f64.sqrt()).abs() < 1e-12);
    }
}
