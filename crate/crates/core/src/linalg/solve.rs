use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// LU factorization with partial pivoting, stored compactly (unit-lower L below the diagonal).
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch {
                op: "lu",
                lhs: a.shape(),
                rhs: (a.cols(), a.rows()),
            });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        if scale == T::zero() {
            return Err(Error::Singular);
        }
        let tiny = scale * T::epsilon() * T::lit(n as f64);
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu.get(i, k).abs()))
                    .fold(
                        (k, T::zero()),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pivot <= tiny {
                return Err(Error::Singular);
            }
            if p != k {
                perm.swap(p, k);
                let data = lu.as_mut_slice();
                for j in 0..n {
                    data.swap(k * n + j, p * n + j);
                }
            }
            let d = lu.get(k, k);
            for i in k + 1..n {
                let f = lu.get(i, k) / d;
                lu.set(i, k, f);
                if f == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let v = lu.get(i, j) - f * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `A X = B` for a right-hand side with `dim` rows.
    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::ShapeMismatch {
                op: "lu-solve",
                lhs: self.lu.shape(),
                rhs: b.shape(),
            });
        }
        let m = b.cols();
        let mut x = Matrix::from_fn(n, m, |i, j| b.get(self.perm[i], j));
        for i in 0..n {
            for k in 0..i {
                let l = self.lu.get(i, k);
                if l == T::zero() {
                    continue;
                }
                for j in 0..m {
                    let v = x.get(i, j) - l * x.get(k, j);
                    x.set(i, j, v);
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.lu.get(i, k);
                if u == T::zero() {
                    continue;
                }
                for j in 0..m {
                    let v = x.get(i, j) - u * x.get(k, j);
                    x.set(i, j, v);
                }
            }
            let d = self.lu.get(i, i);
            for j in 0..m {
                let v = x.get(i, j) / d;
                x.set(i, j, v);
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix<T>> {
        self.solve(&Matrix::identity(self.dim()))
    }
}

pub fn solve<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    Lu::factor(a)?.solve(b)
}

pub fn inverse<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    Lu::factor(a)?.inverse()
}

/// Frobenius condition estimate ‖A‖·‖A⁻¹‖; infinite for singular input.
pub fn condition_estimate<T: Scalar>(a: &Matrix<T>) -> T {
    match inverse(a) {
        Ok(inv) => a.frobenius_norm() * inv.frobenius_norm(),
        Err(_) => T::infinity(),
    }
}

/// Refinement sweeps applied on top of the ridge solve in [`pseudoinverse_apply`].
pub const PINV_REFINE_STEPS: usize = 3;

/// Ridge pseudoinverse `P` of `A` (cols × rows), built on the smaller Gram side.
///
/// `P = Aᵀ(AAᵀ + λI)⁻¹` or `(AᵀA + λI)⁻¹Aᵀ` with λ = 1e-10·‖A‖²_F / min(rows, cols).
/// Returns `None` for a zero matrix.
pub fn ridge_pseudoinverse<T: Scalar>(a: &Matrix<T>) -> Result<Option<Matrix<T>>> {
    let (r, c) = a.shape();
    let fro2 = a.frobenius_norm_sq();
    if fro2 == T::zero() {
        return Ok(None);
    }
    let lambda = ridge_lambda(fro2, r.min(c));
    if r <= c {
        let mut gram = a.matmul_t(a)?;
        add_ridge(&mut gram, lambda);
        Ok(Some(solve(&gram, a)?.transpose()))
    } else {
        let mut gram = a.t_matmul(a)?;
        add_ridge(&mut gram, lambda);
        Ok(Some(solve(&gram, &a.transpose())?))
    }
}

pub(crate) fn ridge_lambda<T: Scalar>(fro2: T, min_dim: usize) -> T {
    T::lit(1e-10) * fro2 / T::lit(min_dim as f64)
}

/// Computes `B·A⁺`.
///
/// Starts from the ridge solution `X = B·P` of [`ridge_pseudoinverse`] and applies
/// [`PINV_REFINE_STEPS`] sweeps of `X ← X + (B − XA)·P`. Each sweep shrinks the ridge bias along
/// a singular direction s by λ/(s² + λ), so the result approaches the exact pseudoinverse while
/// directions with s² ≪ λ stay damped. A zero `A` yields a zero result.
pub fn pseudoinverse_apply<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if b.cols() != a.cols() {
        return Err(Error::ShapeMismatch {
            op: "pseudoinverse_apply",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let Some(p) = ridge_pseudoinverse(a)? else {
        return Ok(Matrix::zeros(b.rows(), a.rows()));
    };
    let mut x = b.matmul(&p)?;
    for _ in 0..PINV_REFINE_STEPS {
        let resid = b.sub(&x.matmul(a)?)?;
        x = x.add(&resid.matmul(&p)?)?;
    }
    Ok(x)
}

fn add_ridge<T: Scalar>(m: &mut Matrix<T>, lambda: T) {
    for i in 0..m.rows() {
        m[(i, i)] += lambda;
    }
}
