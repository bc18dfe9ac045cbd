use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const EIGEN_DIM_LIMIT: usize = 2000;
const SYMMETRY_TOL: f64 = 1e-8;
const OFF_DIAG_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues sorted in descending order, plus the number of Jacobi sweeps used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenResult<T> {
    pub eigenvalues: Vec<T>,
    pub iterations: usize,
}

/// Spectrum of a symmetric matrix via cyclic Jacobi rotations.
pub fn symmetric_eigenvalues<T: Scalar>(h: &Matrix<T>) -> Result<EigenResult<T>> {
    let asym = h.asymmetry().ok_or(Error::ShapeMismatch {
        op: "symmetric_eigenvalues",
        lhs: h.shape(),
        rhs: (h.cols(), h.rows()),
    })?;
    let n = h.rows();
    if n > EIGEN_DIM_LIMIT {
        return Err(Error::DimensionGate {
            dim: n,
            limit: EIGEN_DIM_LIMIT,
            hint: "; use a smaller synthetic model for Hessian spectra",
        });
    }
    let scale = h.frobenius_norm();
    if asym > T::lit(SYMMETRY_TOL) * scale.max(T::one()) {
        return Err(Error::NotSymmetric(asym.to_f64_lossy()));
    }
    let mut a = h.symmetrized()?;
    let target = T::lit(OFF_DIAG_TOL) * scale;
    let mut sweeps = 0;
    loop {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, p, q);
            }
        }
    }
    let mut eigenvalues: Vec<T> = (0..n).map(|i| a.get(i, i)).collect();
    eigenvalues.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(EigenResult {
        eigenvalues,
        iterations: sweeps,
    })
}

fn off_diagonal_norm<T: Scalar>(a: &Matrix<T>) -> T {
    let n = a.rows();
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating a[p][q].
fn rotate<T: Scalar>(a: &mut Matrix<T>, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == T::zero() {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (T::lit(2.0) * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
    let c = T::one() / (t * t + T::one()).sqrt();
    let s = t * c;
    let n = a.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a.set(k, p, new_kp);
        a.set(p, k, new_kp);
        a.set(k, q, new_kq);
        a.set(q, k, new_kq);
    }
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, T::zero());
    a.set(q, p, T::zero());
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = Matrix<f64>;

    #[test]
    fn diagonal_sorted() {
        let r = symmetric_eigenvalues(&M::diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(r.eigenvalues, vec![3.0, 2.0, 1.0]);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn two_by_two_known_spectrum() {
        let h = M::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let r = symmetric_eigenvalues(&h).unwrap();
        assert!((r.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((r.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_rejected() {
        let h = M::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(
            symmetric_eigenvalues(&h),
            Err(Error::NotSymmetric(_))
        ));
    }
}
