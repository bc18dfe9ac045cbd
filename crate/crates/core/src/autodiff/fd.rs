//! Central finite-difference oracles used to cross-check analytic derivatives.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Relative step for gradients: h = 1e-5·max(1, |x|).
pub const GRAD_STEP: f64 = 1e-5;
/// Relative step for Hessians and jets: h = 1e-4·max(1, |x|).
pub const HESS_STEP: f64 = 1e-4;

fn step<T: Scalar>(base: f64, x: T) -> T {
    T::lit(base) * x.abs().max(T::one())
}

fn finite<T: Scalar>(v: T, what: &str, coord: usize) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!(
            "{what} evaluation at coordinate {coord}"
        )))
    }
}

/// Central-difference gradient of a scalar function.
///
/// `h` overrides the base relative step (default 1e-5).
pub fn fd_gradient<T, F>(mut f: F, x: &[T], h: Option<f64>) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    let base = h.unwrap_or(GRAD_STEP);
    let mut xs = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let hi = step(base, x[i]);
        xs[i] = x[i] + hi;
        let plus = finite(f(&xs)?, "fd_gradient", i)?;
        xs[i] = x[i] - hi;
        let minus = finite(f(&xs)?, "fd_gradient", i)?;
        xs[i] = x[i];
        out.push((plus - minus) / (T::lit(2.0) * hi));
    }
    Ok(out)
}

/// Hessian from central differences of an analytic gradient, symmetrized as (H + Hᵀ)/2.
pub fn fd_hessian<T, G>(mut grad: G, x: &[T], h: Option<f64>) -> Result<Matrix<T>>
where
    T: Scalar,
    G: FnMut(&[T]) -> Result<Vec<T>>,
{
    let base = h.unwrap_or(HESS_STEP);
    let n = x.len();
    let mut xs = x.to_vec();
    let mut hess = Matrix::zeros(n, n);
    for j in 0..n {
        let hj = step(base, x[j]);
        xs[j] = x[j] + hj;
        let plus = grad(&xs)?;
        xs[j] = x[j] - hj;
        let minus = grad(&xs)?;
        xs[j] = x[j];
        if plus.len() != n || minus.len() != n {
            return Err(Error::BadLength {
                rows: n,
                cols: 1,
                len: plus.len().min(minus.len()),
            });
        }
        for i in 0..n {
            let v = finite(plus[i], "fd_hessian", j)? - finite(minus[i], "fd_hessian", j)?;
            hess.set(i, j, v / (T::lit(2.0) * hj));
        }
    }
    hess.symmetrized()
}

/// First three derivatives at t = 0 of a vector-valued curve, by central differences.
///
/// The first two derivatives use five-point stencils with step h (default 1e-4). The third
/// derivative uses a seven-point stencil on the wider step 25h.
pub fn fd_jet<T, C>(mut curve: C, h: Option<f64>) -> Result<[Vec<T>; 3]>
where
    T: Scalar,
    C: FnMut(T) -> Result<Vec<T>>,
{
    let h = T::lit(h.unwrap_or(HESS_STEP));
    let h3 = T::lit(25.0) * h;
    let mut eval = |k: usize, t: T| -> Result<Vec<T>> {
        let v = curve(t)?;
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "fd_jet curve at stencil point {k}, coordinate {i}"
            )));
        }
        Ok(v)
    };
    let offsets = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut near = Vec::with_capacity(5);
    for (k, &o) in offsets.iter().enumerate() {
        near.push(eval(k, T::lit(o) * h)?);
    }
    let mut far = Vec::with_capacity(6);
    for (k, o) in [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0].into_iter().enumerate() {
        far.push(eval(5 + k, T::lit(o) * h3)?);
    }
    let n = near[2].len();
    if near.iter().chain(&far).any(|v| v.len() != n) {
        return Err(Error::BadLength {
            rows: n,
            cols: 1,
            len: 0,
        });
    }
    let c = |x: f64| T::lit(x);
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    let mut d3 = Vec::with_capacity(n);
    for i in 0..n {
        let (m2, m1, z, p1, p2) = (near[0][i], near[1][i], near[2][i], near[3][i], near[4][i]);
        d1.push((m2 - c(8.0) * m1 + c(8.0) * p1 - p2) / (c(12.0) * h));
        d2.push((-m2 + c(16.0) * m1 - c(30.0) * z + c(16.0) * p1 - p2) / (c(12.0) * h * h));
        let f = |k: usize| far[k][i];
        d3.push(
            (f(0) - c(8.0) * f(1) + c(13.0) * f(2) - c(13.0) * f(3) + c(8.0) * f(4) - f(5))
                / (c(8.0) * h3 * h3 * h3),
        );
    }
    Ok([d1, d2, d3])
}
