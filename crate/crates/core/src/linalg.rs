//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{NprError, Result};

/// Ridge added once when a Newton system fails to factor.
pub const JITTER: f64 = 1e-10;

/// Least squares through a Householder QR of `x`. Returns the coefficients and
/// the `R` factor.
pub fn lstsq_qr(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(NprError::DimensionMismatch(format!(
            "design has {n} rows, response has {} entries",
            y.len()
        )));
    }
    if n < p {
        return Err(NprError::InsufficientObservations { n, columns: p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if p > 0 && (scale == 0.0 || r.diagonal().iter().any(|v| v.abs() <= scale * 1e-13)) {
        return Err(NprError::Singular("design is rank deficient".into()));
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let head = qty.rows(0, p).into_owned();
    let theta = r
        .solve_upper_triangular(&head)
        .ok_or_else(|| NprError::Singular("triangular solve failed".into()))?;
    Ok((theta, r))
}

/// `(R^T R)^{-1}` from an upper-triangular `R`.
pub fn gram_inverse_from_r(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = r.nrows();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| NprError::Singular("triangular inverse failed".into()))?;
    let inv = &r_inv * r_inv.transpose();
    Ok(symmetrize(inv))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Solves `h x = g` for symmetric positive definite `h`, retrying once with
/// `JITTER * I` added when the Cholesky factorization fails.
pub fn solve_spd_with_jitter(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(g));
    }
    let jittered = h + DMatrix::identity(h.nrows(), h.ncols()) * JITTER;
    jittered
        .cholesky()
        .map(|ch| ch.solve(g))
        .ok_or_else(|| NprError::Singular("information matrix is not positive definite".into()))
}

/// Inverse of a symmetric positive definite matrix, with the same jitter fallback.
pub fn spd_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = match h.clone().cholesky() {
        Some(ch) => ch,
        None => (h + DMatrix::identity(h.nrows(), h.ncols()) * JITTER)
            .cholesky()
            .ok_or_else(|| NprError::Singular("matrix is not positive definite".into()))?,
    };
    Ok(symmetrize(ch.inverse()))
}

/// Ratio of extreme eigenvalues of a symmetric matrix.
pub fn condition_number_sym(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
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
    fn qr_solves_exact_system() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![2.0, 3.0, 5.0]);
        let (theta, r) = lstsq_qr(&x, &y).unwrap();
        assert!((theta[0] - 2.0).abs() < 1e-12 && (theta[1] - 3.0).abs() < 1e-12);
        let inv = gram_inverse_from_r(&r).unwrap();
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        assert!((inv - direct).amax() < 1e-12);
    }

    #[test]
    fn qr_flags_rank_deficiency() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(lstsq_qr(&x, &y), Err(NprError::Singular(_))));
    }

    #[test]
    fn jitter_rescues_semidefinite_systems_only_once() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let x = solve_spd_with_jitter(&h, &g).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9);
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(solve_spd_with_jitter(&neg, &g).is_err());
    }

    #[test]
    fn condition_number_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 2.0]));
        assert!((condition_number_sym(&m) - 4.0).abs() < 1e-12);
    }
}
