use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

const TAYLOR_DEGREE: usize = 12;

/// Matrix exponential by scaling and squaring around a degree-12 Taylor polynomial.
pub fn expm<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch {
            op: "expm",
            lhs: m.shape(),
            rhs: (m.cols(), m.rows()),
        });
    }
    let norm = m.frobenius_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("expm input".into()));
    }
    // scale until the Taylor tail is below roundoff
    let mut squarings = 0u32;
    let mut s = T::one();
    while norm * s > T::lit(0.25) {
        s = s * T::lit(0.5);
        squarings += 1;
    }
    let a = m.scale(s);
    let n = m.rows();
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=TAYLOR_DEGREE {
        term = term.matmul(&a)?.scale(T::one() / T::lit(k as f64));
        result.axpy(T::one(), &term)?;
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = Matrix<f64>;

    #[test]
    fn zero_gives_identity() {
        assert_eq!(expm(&M::zeros(3, 3)).unwrap(), M::identity(3));
    }

    #[test]
    fn rotation_generator() {
        let t = 1.3;
        let m = M::from_rows(&[&[0.0, -t], &[t, 0.0]]).unwrap();
        let e = expm(&m).unwrap();
        assert!((e.get(0, 0) - t.cos()).abs() < 1e-13);
        assert!((e.get(1, 0) - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn diagonal_matches_scalar_exp() {
        let m = M::diag(&[-3.0, 0.5, 2.0]);
        let e = expm(&m).unwrap();
        for (i, v) in [-3.0f64, 0.5, 2.0].iter().enumerate() {
            assert!((e.get(i, i) - v.exp()).abs() < 1e-12 * v.exp().max(1.0));
        }
    }
}
