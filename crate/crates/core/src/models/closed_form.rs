use crate::error::{Error, Result};
use crate::Mat;

/// A smooth loss on ℝⁿ with analytic first and second derivatives.
pub trait ScalarField {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
    fn hessian(&self, w: &[f64]) -> Mat;

    /// Contraction `T(u, v)_j = Σ_{ik} ∂³L/∂w_j∂w_i∂w_k · u_i · v_k`, when known in closed form.
    fn third_contract(&self, _w: &[f64], _u: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// L(w) = ½wᵀAw + bᵀw + c.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub a: Mat,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticSpec {
    pub fn new(a: Mat, b: Vec<f64>, c: f64) -> Result<Self> {
        let asym = a.asymmetry().ok_or(Error::ShapeMismatch {
            op: "quadratic",
            lhs: a.shape(),
            rhs: (a.cols(), a.rows()),
        })?;
        if asym > 1e-10 {
            return Err(Error::NotSymmetric(asym));
        }
        if b.len() != a.rows() {
            return Err(Error::ShapeMismatch {
                op: "quadratic",
                lhs: a.shape(),
                rhs: (b.len(), 1),
            });
        }
        Ok(Self { a, b, c })
    }

    pub fn homogeneous(a: Mat) -> Result<Self> {
        let n = a.rows();
        Self::new(a, vec![0.0; n], 0.0)
    }

    /// ½(w₁² + λ²w₂²).
    pub fn ellipse(lambda: f64) -> Self {
        Self::homogeneous(Mat::diag(&[1.0, lambda * lambda])).expect("diagonal is symmetric")
    }

    /// (w₁ + 2w₂ − 7)² + (2w₁ + w₂ − 5)², expanded.
    pub fn booth() -> Self {
        let a = Mat::from_rows(&[&[10.0, 8.0], &[8.0, 10.0]]).expect("static shape");
        Self::new(a, vec![-34.0, -38.0], 74.0).expect("static symmetric")
    }

    fn a_times(&self, w: &[f64]) -> Vec<f64> {
        let n = self.a.rows();
        (0..n)
            .map(|i| self.a.row_slice(i).iter().zip(w).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Minimizer −A⁻¹b.
    pub fn minimizer(&self) -> Result<Vec<f64>> {
        let b = Mat::column(&self.b)?.scale(-1.0);
        Ok(crate::linalg::solve(&self.a, &b)?.into_vec())
    }
}

impl ScalarField for QuadraticSpec {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let aw = self.a_times(w);
        0.5 * dot(w, &aw) + dot(&self.b, w) + self.c
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.a_times(w)
            .iter()
            .zip(&self.b)
            .map(|(x, y)| x + y)
            .collect()
    }

    fn hessian(&self, _w: &[f64]) -> Mat {
        self.a.clone()
    }

    fn third_contract(&self, _w: &[f64], _u: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim()])
    }
}

pub fn quadratic_loss(spec: &QuadraticSpec, w: &[f64]) -> f64 {
    spec.value(w)
}

pub fn ellipse_loss(lambda: f64, w: &[f64]) -> f64 {
    0.5 * (w[0] * w[0] + lambda * lambda * w[1] * w[1])
}

pub fn booth_loss(w: &[f64]) -> f64 {
    (w[0] + 2.0 * w[1] - 7.0).powi(2) + (2.0 * w[0] + w[1] - 5.0).powi(2)
}

/// L(w) = Σ cᵢ wᵢ⁴ / 4 + ½‖w‖²: a convex non-quadratic field with a closed-form third derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticSpec {
    pub coeffs: Vec<f64>,
}

impl ScalarField for QuarticSpec {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }

    fn value(&self, w: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(w)
            .map(|(c, x)| c * x.powi(4) / 4.0 + 0.5 * x * x)
            .sum()
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.coeffs
            .iter()
            .zip(w)
            .map(|(c, x)| c * x.powi(3) + x)
            .collect()
    }

    fn hessian(&self, w: &[f64]) -> Mat {
        let d: Vec<f64> = self
            .coeffs
            .iter()
            .zip(w)
            .map(|(c, x)| 3.0 * c * x * x + 1.0)
            .collect();
        Mat::diag(&d)
    }

    fn third_contract(&self, w: &[f64], u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        Some(
            (0..self.dim())
                .map(|j| 6.0 * self.coeffs[j] * w[j] * u[j] * v[j])
                .collect(),
        )
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
