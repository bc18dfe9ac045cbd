use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::models::ScalarField;
use crate::theory::{dot, mat_vec, norm};
use crate::Mat;

const ANTISYMMETRY_TOLERANCE: f64 = 1e-12;

/// The elementary antisymmetric matrices `E_ij − E_ji`, i < j.
pub fn antisymmetric_basis(n: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let mut m = Mat::zeros(n, n);
            m.set(i, j, 1.0);
            m.set(j, i, -1.0);
            out.push(m);
        }
    }
    out
}

fn check_antisymmetric(m: &Mat, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "bracket",
            lhs: m.shape(),
            rhs: (n, n),
        });
    }
    let skew = m.add(&m.transpose())?.max_abs();
    if skew > ANTISYMMETRY_TOLERANCE {
        return Err(Error::InvalidConfig(format!(
            "M is not antisymmetric: max |M + Mᵀ| = {skew:e}"
        )));
    }
    Ok(())
}

/// `[A, R]L` at `w` for the field `A = (M∇L)ᵢ∂ᵢ`: minus the derivative of ‖∇L‖² along M∇L.
pub fn bracket_value(field: &dyn ScalarField, w: &[f64], m: &Mat) -> Result<f64> {
    check_antisymmetric(m, field.dim())?;
    let g = field.gradient(w);
    let hg = mat_vec(&field.hessian(w), &g);
    Ok(-2.0 * dot(&mat_vec(m, &g), &hg))
}

/// `T(u, v)_j = Σ ∂³L/∂w_j∂w_i∂w_k uᵢ v_k`, from the closed form when the field has one and
/// otherwise by central differences of Hessian–vector products.
fn third_contract(field: &dyn ScalarField, w: &[f64], u: &[f64], v: &[f64]) -> Vec<f64> {
    if let Some(t) = field.third_contract(w, u, v) {
        return t;
    }
    let scale = norm(v);
    if scale == 0.0 {
        return vec![0.0; w.len()];
    }
    let h = 1e-4 * norm(w).max(1.0) / scale;
    let shifted = |s: f64| -> Vec<f64> {
        let p: Vec<f64> = w.iter().zip(v).map(|(x, d)| x + s * d).collect();
        mat_vec(&field.hessian(&p), u)
    };
    let (plus, minus) = (shifted(h), shifted(-h));
    plus.iter()
        .zip(&minus)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect()
}

/// `R[A, R]L = 2 Σ M_αj ∂_kL ∂_αL ∂³L/∂w_k∂w_i∂w_j ∂_iL`.
pub fn flow_bracket_derivative(field: &dyn ScalarField, w: &[f64], m: &Mat) -> Result<f64> {
    check_antisymmetric(m, field.dim())?;
    let g = field.gradient(w);
    let mt_g = mat_vec(&m.transpose(), &g);
    Ok(2.0 * dot(&mt_g, &third_contract(field, w, &g, &g)))
}

/// Largest |[A, R]L| over the antisymmetric basis.
pub fn bracket_residual(field: &dyn ScalarField, w: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for m in antisymmetric_basis(field.dim()) {
        worst = worst.max(bracket_value(field, w, &m)?.abs());
    }
    Ok(worst)
}

/// Rank of `{Mᵢ v}` over the antisymmetric basis, by counting eigenvalues of its Gram matrix
/// above a relative threshold.
pub fn orthogonal_span_rank(v: &[f64]) -> Result<usize> {
    let n = v.len();
    let vectors: Vec<Vec<f64>> = antisymmetric_basis(n)
        .iter()
        .map(|m| mat_vec(m, v))
        .collect();
    if vectors.is_empty() {
        return Ok(0);
    }
    let gram = Mat::from_fn(n, n, |i, j| vectors.iter().map(|x| x[i] * x[j]).sum());
    let eig = symmetric_eigenvalues(&gram)?.eigenvalues;
    let top = eig.iter().cloned().fold(0.0, f64::max);
    Ok(eig.iter().filter(|&&l| l > 1e-10 * top).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{QuadraticSpec, QuarticSpec};

    #[test]
    fn zero_generator_gives_zero() {
        let q = QuarticSpec {
            coeffs: vec![1.0, 2.0, 0.5],
        };
        let w = [0.4, -1.0, 2.0];
        let zero = Mat::zeros(3, 3);
        assert_eq!(bracket_value(&q, &w, &zero).unwrap(), 0.0);
        assert_eq!(flow_bracket_derivative(&q, &w, &zero).unwrap(), 0.0);
    }

    #[test]
    fn asymmetric_generator_is_rejected() {
        let q = QuadraticSpec::ellipse(2.0);
        let m = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert!(bracket_value(&q, &[1.0, 1.0], &m).is_err());
        assert!(flow_bracket_derivative(&q, &[1.0, 1.0], &m).is_err());
    }

    #[test]
    fn basis_size_and_shape() {
        let b = antisymmetric_basis(4);
        assert_eq!(b.len(), 6);
        assert!(b
            .iter()
            .all(|m| m.add(&m.transpose()).unwrap().max_abs() == 0.0));
    }

    #[test]
    fn fd_third_contract_matches_closed_form() {
        struct NoClosedForm(QuarticSpec);
        impl ScalarField for NoClosedForm {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn value(&self, w: &[f64]) -> f64 {
                self.0.value(w)
            }
            fn gradient(&self, w: &[f64]) -> Vec<f64> {
                self.0.gradient(w)
            }
            fn hessian(&self, w: &[f64]) -> Mat {
                self.0.hessian(w)
            }
        }
        let q = QuarticSpec {
            coeffs: vec![1.0, -0.5, 2.0],
        };
        let w = [0.7, 1.1, -0.3];
        let m = antisymmetric_basis(3)[1].clone();
        let exact = flow_bracket_derivative(&q, &w, &m).unwrap();
        let fd = flow_bracket_derivative(&NoClosedForm(q), &w, &m).unwrap();
        assert!(
            (exact - fd).abs() < 1e-6 * exact.abs().max(1.0),
            "{exact} vs {fd}"
        );
    }
}
