use nalgebra::{DMatrix, DVector};

use super::{Result, SsmError};

/// HiPPO-LegS state matrix and its rank-one correction vector (0-based):
/// `A[n][k] = -sqrt(2n+1) sqrt(2k+1)` below the diagonal, `-(n+1)` on it,
/// zero above; `P[n] = sqrt(n + 1/2)`.
pub fn hippo_legs(n: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if n == 0 {
        return Err(SsmError::ZeroStateDim);
    }
    let a = DMatrix::from_fn(n, n, |r, k| {
        if r > k {
            -((2 * r + 1) as f64).sqrt() * ((2 * k + 1) as f64).sqrt()
        } else if r == k {
            -((r + 1) as f64)
        } else {
            0.0
        }
    });
    let p = DVector::from_fn(n, |r, _| (r as f64 + 0.5).sqrt());
    Ok((a, p))
}

/// `A + P P^T + I/2`, the normal part of HiPPO-LegS.
///
/// Built from the simplified entries `-q/2` below the diagonal, `q/2` above
/// and `0` on it, where `q = sqrt(2n+1) sqrt(2k+1)`. Summing the float
/// matrices instead leaves rounding residue on the diagonal; this form is
/// skew-symmetric bit for bit.
pub fn hippo_normal_part(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(SsmError::ZeroStateDim);
    }
    Ok(DMatrix::from_fn(n, n, |r, k| {
        let q = 0.5 * ((2 * r.max(k) + 1) as f64).sqrt() * ((2 * r.min(k) + 1) as f64).sqrt();
        match r.cmp(&k) {
            std::cmp::Ordering::Greater => -q,
            std::cmp::Ordering::Less => q,
            std::cmp::Ordering::Equal => 0.0,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let (a, p) = hippo_legs(2).unwrap();
        assert_eq!(a[(0, 0)], -1.0);
        assert_eq!(a[(0, 1)], 0.0);
        assert!((a[(1, 0)] + 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(a[(1, 1)], -2.0);
        assert!((p[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((p[1] - 1.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn one_by_one_normal_part_is_zero() {
        let s = hippo_normal_part(1).unwrap();
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn zero_rejected() {
        assert_eq!(hippo_legs(0).unwrap_err(), SsmError::ZeroStateDim);
    }

    #[test]
    fn skew_symmetric_exactly() {
        for n in 1..=64 {
            let s = hippo_normal_part(n).unwrap();
            let sum = &s + s.transpose();
            assert_eq!(sum.amax(), 0.0, "n = {n}");
            let (a, p) = hippo_legs(n).unwrap();
            let direct = a + &p * p.transpose() + DMatrix::identity(n, n) * 0.5;
            assert!((direct - s).amax() < 1e-12 * n as f64, "n = {n}");
        }
    }
}
