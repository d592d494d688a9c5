//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{invalid, Error, Result};
use crate::rng;
use nalgebra::{DMatrix, DVector};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Angle in radians between two nonzero vectors.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b) / (norm2(a) * norm2(b));
    c.clamp(-1.0, 1.0).acos()
}

pub fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(invalid("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| row(m, i)).collect()
}

/// Gram-Schmidt with one reorthogonalization pass.
pub fn orthonormalize_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (k, d) = m.shape();
    let mut out = DMatrix::<f64>::zeros(k, d);
    let scale = m.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(1e-300);
    for i in 0..k {
        let mut v: DVector<f64> = m.row(i).transpose();
        for _ in 0..2 {
            for j in 0..i {
                let q = out.row(j).transpose();
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let n = v.norm();
        if n <= 1e-10 * scale {
            return Err(Error::RankDeficient(format!("row {i} is linearly dependent")));
        }
        out.set_row(i, &(v / n).transpose());
    }
    Ok(out)
}

/// Max entry of |U U^T - I|.
pub fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
    let g = u * u.transpose();
    let k = g.nrows();
    let mut e = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let t = if i == j { 1.0 } else { 0.0 };
            e = e.max((g[(i, j)] - t).abs());
        }
    }
    e
}

/// Random k x d matrix with orthonormal rows.
pub fn random_orthonormal(k: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if k == 0 || k > d {
        return Err(invalid(format!("need 1 <= k <= d, got k={k}, d={d}")));
    }
    let mut r = rng::stream(seed, "orthonormal", 0);
    let g = DMatrix::from_fn(k, d, |_, _| rng::gaussian(&mut r));
    orthonormalize_rows(&g)
}

pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(invalid("matrix is not square"));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * (1.0 + m[(i, j)].abs()) {
                return Err(invalid(format!("matrix not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Validate that `sigma` is symmetric positive definite.
pub fn check_spd(sigma: &DMatrix<f64>) -> Result<()> {
    check_symmetric(sigma, 1e-10)?;
    let ev = sigma.clone().symmetric_eigen().eigenvalues;
    let max = ev.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let min = ev.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    if min <= 1e-12 * max.max(1e-300) {
        return Err(invalid(format!("covariance not positive definite (min eigenvalue {min:.3e})")));
    }
    Ok(())
}

/// Condition number of a symmetric matrix from its eigenvalues.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let ev = m.clone().symmetric_eigen().eigenvalues;
    let max = ev.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Principal angles (radians, ascending) between the row spaces of two
/// matrices with orthonormal rows. Small angles come from the sines, large
/// ones from the cosines, which keeps both ends accurate.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let m = a * b.transpose();
    let mut cos: Vec<f64> = m.clone().svd(false, false).singular_values.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    cos.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let resid = a - &m * b;
    let mut sin: Vec<f64> = resid.svd(false, false).singular_values.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sin.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cos.iter()
        .enumerate()
        .map(|(i, &c)| {
            let s = sin.get(i).copied().unwrap_or(1.0);
            if s < std::f64::consts::FRAC_1_SQRT_2 {
                s.asin()
            } else {
                c.acos()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_orthonormal_rows() {
        let u = random_orthonormal(3, 10, 4).unwrap();
        assert!(orthonormality_error(&u) < 1e-12);
    }

    #[test]
    fn dependent_rows_rejected() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(orthonormalize_rows(&m), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn principal_angles_of_rotated_line() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let t: f64 = 0.3;
        let b = DMatrix::from_row_slice(1, 2, &[t.cos(), t.sin()]);
        assert!((principal_angles(&a, &b)[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn spd_check() {
        assert!(check_spd(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))).is_ok());
        assert!(check_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }
}
