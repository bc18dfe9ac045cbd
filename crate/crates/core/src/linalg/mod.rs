//! Dense matrix kernels: products, LU solves, ridge pseudoinverse, matrix exponential and a
//! symmetric eigensolver.

mod eigen;
mod expm;
mod matrix;
mod solve;

pub use eigen::{symmetric_eigenvalues, EigenResult, EIGEN_DIM_LIMIT};
pub use expm::expm;
pub use matrix::Matrix;
pub(crate) use solve::ridge_lambda;
pub use solve::{
    condition_estimate, inverse, pseudoinverse_apply, ridge_pseudoinverse, solve, Lu,
    PINV_REFINE_STEPS,
};

/// Flattens a list of matrices into one row-major vector.
pub fn flatten<T: crate::Scalar>(ms: &[Matrix<T>]) -> Vec<T> {
    ms.iter()
        .flat_map(|m| m.as_slice().iter().copied())
        .collect()
}

/// Inverse of [`flatten`]: rebuilds matrices with the given shapes.
pub fn unflatten<T: crate::Scalar>(flat: &[T], shapes: &[(usize, usize)]) -> Vec<Matrix<T>> {
    let mut off = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = Matrix::from_parts(r, c, flat[off..off + r * c].to_vec());
            off += r * c;
            m
        })
        .collect()
}
