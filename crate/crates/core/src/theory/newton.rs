use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_estimate, Lu};
use crate::models::ScalarField;
use crate::theory::{dot, mat_vec, norm, random_vector};
use crate::Mat;

const MAX_CONDITION: f64 = 1e10;
const B2_TOLERANCE: f64 = 1e-10;
const B3_TOLERANCE: f64 = 1e-6;
const GRID_POINTS: usize = 10_000;
const ASCENT_RESTARTS: usize = 50;

/// Newton's direction split into its components along and orthogonal to the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonDecomposition {
    /// −∇L
    pub v1: Vec<f64>,
    /// −H⁻¹∇L
    pub v2: Vec<f64>,
    pub v_par: Vec<f64>,
    pub v_perp: Vec<f64>,
}

pub fn newton_decompose(grad: &[f64], hessian: &Mat) -> Result<NewtonDecomposition> {
    let n = grad.len();
    if hessian.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "newton_decompose",
            lhs: hessian.shape(),
            rhs: (n, n),
        });
    }
    let gg = dot(grad, grad);
    if gg == 0.0 {
        return Err(Error::Degenerate(
            "Newton decomposition at a zero gradient".into(),
        ));
    }
    let lu = Lu::factor(hessian)?;
    if condition_estimate(hessian) > MAX_CONDITION {
        return Err(Error::Singular);
    }
    let v1: Vec<f64> = grad.iter().map(|g| -g).collect();
    let v2 = lu.solve(&Mat::column(&v1)?)?.into_vec();
    let c = dot(&v2, &v1) / gg;
    let v_par: Vec<f64> = v1.iter().map(|x| c * x).collect();
    let v_perp = v2.iter().zip(&v_par).map(|(a, b)| a - b).collect();
    Ok(NewtonDecomposition {
        v1,
        v2,
        v_par,
        v_perp,
    })
}

/// Both sides of `(wᵀAᵅw)² ≤ (wᵀAᵅ⁺ᵝw)(wᵀAᵅ⁻ᵝw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaB1 {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs ≤ rhs` up to a relative slack of 1e-9.
    pub holds: bool,
}

fn power_form(a: &Mat, lu: Option<&Lu<f64>>, w: &[f64], k: i32) -> Result<f64> {
    let mut v = w.to_vec();
    for _ in 0..k.unsigned_abs() {
        v = if k > 0 {
            mat_vec(a, &v)
        } else {
            lu.ok_or(Error::Singular)?
                .solve(&Mat::column(&v)?)?
                .into_vec()
        };
    }
    Ok(dot(w, &v))
}

pub fn lemma_b1(a: &Mat, w: &[f64], alpha: i32, beta: i32) -> Result<LemmaB1> {
    if a.shape() != (w.len(), w.len()) {
        return Err(Error::ShapeMismatch {
            op: "lemma_b1",
            lhs: a.shape(),
            rhs: (w.len(), w.len()),
        });
    }
    let lu = if alpha - beta < 0 {
        Some(Lu::factor(a)?)
    } else {
        None
    };
    let lhs = power_form(a, lu.as_ref(), w, alpha)?.powi(2);
    let rhs =
        power_form(a, lu.as_ref(), w, alpha + beta)? * power_form(a, lu.as_ref(), w, alpha - beta)?;
    Ok(LemmaB1 {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9 * rhs.abs(),
    })
}

/// A sample where a checked inequality failed, with the full state needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub point: Vec<f64>,
    pub grad: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropReport {
    pub checked: usize,
    pub skipped: usize,
    /// The least favourable value seen: the minimum derivative for B.2, the largest gap for B.3.
    pub worst: f64,
    pub tolerance: f64,
    pub counterexamples: Vec<Counterexample>,
}

impl PropReport {
    fn new(tolerance: f64, worst: f64) -> Self {
        Self {
            checked: 0,
            skipped: 0,
            worst,
            tolerance,
            counterexamples: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

fn rows(h: &Mat) -> Vec<Vec<f64>> {
    (0..h.rows()).map(|i| h.row_slice(i).to_vec()).collect()
}

/// Directional derivative of ‖∇L‖² along v⊥, `v⊥ · 2H∇L`, which is non-negative for convex L.
pub fn check_prop_b2(field: &dyn ScalarField, points: &[Vec<f64>]) -> Result<PropReport> {
    let mut report = PropReport::new(-B2_TOLERANCE, f64::INFINITY);
    for w in points {
        let g = field.gradient(w);
        let h = field.hessian(w);
        let dec = match newton_decompose(&g, &h) {
            Ok(d) => d,
            Err(Error::Degenerate(_)) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let value = 2.0 * dot(&dec.v_perp, &mat_vec(&h, &g));
        report.checked += 1;
        report.worst = report.worst.min(value);
        if value < -B2_TOLERANCE {
            report.counterexamples.push(Counterexample {
                point: w.clone(),
                grad: g,
                hessian: rows(&h),
                value,
            });
        }
    }
    Ok(report)
}

fn project_out(v: &[f64], unit: &[f64]) -> Vec<f64> {
    let p = dot(v, unit);
    v.iter().zip(unit).map(|(x, u)| x - p * u).collect()
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

/// Orthonormal basis of the complement of the unit vector `u`.
fn complement_basis(u: &[f64]) -> Vec<Vec<f64>> {
    let n = u.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let mut v = project_out(&e, u);
        for b in &basis {
            v = project_out(&v, b);
        }
        if let Some(v) = normalized(&v).filter(|_| norm(&v) > 1e-6) {
            basis.push(v);
        }
        if basis.len() == n - 1 {
            break;
        }
    }
    basis
}

/// Maximum of `c · d` over unit `d ⊥ u`, found without using the closed form.
fn brute_force_max<R: Rng + ?Sized>(c: &[f64], u: &[f64], rng: &mut R) -> f64 {
    let basis = complement_basis(u);
    let at = |theta: f64| {
        let d: Vec<f64> = (0..c.len())
            .map(|i| theta.cos() * basis[0][i] + theta.sin() * basis[1][i])
            .collect();
        dot(c, &d)
    };
    match basis.len() {
        0 => 0.0,
        1 => dot(c, &basis[0]).abs(),
        2 => {
            let step = std::f64::consts::TAU / GRID_POINTS as f64;
            let best = (0..GRID_POINTS)
                .map(|i| i as f64 * step)
                .max_by(|a, b| at(*a).total_cmp(&at(*b)))
                .unwrap_or(0.0);
            // golden-section refinement inside the winning grid cell
            let (mut lo, mut hi) = (best - step, best + step);
            let r = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..100 {
                let (m1, m2) = (hi - r * (hi - lo), lo + r * (hi - lo));
                if at(m1) < at(m2) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            at(0.5 * (lo + hi)).max(at(best))
        }
        _ => {
            let scale = norm(c).max(1e-300);
            let mut best = f64::NEG_INFINITY;
            for _ in 0..ASCENT_RESTARTS {
                let Some(mut d) = normalized(&project_out(&random_vector(c.len(), rng), u)) else {
                    continue;
                };
                for _ in 0..1000 {
                    let stepped: Vec<f64> = d
                        .iter()
                        .zip(c)
                        .map(|(x, ci)| x + 0.1 * ci / scale)
                        .collect();
                    let Some(next) = normalized(&project_out(&stepped, u)) else {
                        break;
                    };
                    let moved = norm(&next.iter().zip(&d).map(|(a, b)| a - b).collect::<Vec<_>>());
                    d = next;
                    if moved < 1e-15 {
                        break;
                    }
                }
                best = best.max(dot(c, &d));
            }
            best
        }
    }
}

/// Compares `v̂⊥ · 2H∇L` with the brute-force maximum over unit directions orthogonal to ∇L.
///
/// Samples where the objective vanishes on the whole constraint set (isotropic Hessians) or
/// where v⊥ = 0 are skipped.
pub fn check_prop_b3<R: Rng + ?Sized>(
    field: &dyn ScalarField,
    points: &[Vec<f64>],
    rng: &mut R,
) -> Result<PropReport> {
    let mut report = PropReport::new(B3_TOLERANCE, 0.0);
    for w in points {
        let g = field.gradient(w);
        let h = field.hessian(w);
        let dec = match newton_decompose(&g, &h) {
            Ok(d) => d,
            Err(Error::Degenerate(_)) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let c: Vec<f64> = mat_vec(&h, &g).iter().map(|x| 2.0 * x).collect();
        let u = normalized(&g).expect("nonzero gradient");
        let flat = norm(&project_out(&c, &u)) <= 1e-12 * norm(&c);
        let v_hat = normalized(&dec.v_perp).filter(|_| norm(&dec.v_perp) > 1e-12 * norm(&dec.v2));
        let Some(v_hat) = v_hat.filter(|_| !flat) else {
            report.skipped += 1;
            continue;
        };
        let gap = brute_force_max(&c, &u, rng) - dot(&c, &v_hat);
        report.checked += 1;
        report.worst = report.worst.max(gap);
        if gap > B3_TOLERANCE {
            report.counterexamples.push(Counterexample {
                point: w.clone(),
                grad: g,
                hessian: rows(&h),
                value: gap,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticSpec;
    use crate::rng::seeded;

    #[test]
    fn hand_derived_decomposition() {
        let h = Mat::diag(&[1.0, 4.0]);
        let d = newton_decompose(&[1.0, 4.0], &h).unwrap();
        assert_eq!(d.v1, vec![-1.0, -4.0]);
        assert!((d.v2[0] + 1.0).abs() < 1e-15 && (d.v2[1] + 1.0).abs() < 1e-15);
        // v₂·v₁ = 5 and ‖v₁‖² = 17
        let want_par = [-5.0 / 17.0, -20.0 / 17.0];
        let want_perp = [-12.0 / 17.0, 3.0 / 17.0];
        for i in 0..2 {
            assert!((d.v_par[i] - want_par[i]).abs() < 1e-15);
            assert!((d.v_perp[i] - want_perp[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_hessian_has_no_orthogonal_part() {
        let d = newton_decompose(&[0.3, -2.0, 1.0], &Mat::identity(3)).unwrap();
        assert_eq!(d.v2, d.v1);
        assert!(d.v_perp.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn decomposition_errors() {
        assert!(matches!(
            newton_decompose(&[0.0, 0.0], &Mat::identity(2)),
            Err(Error::Degenerate(_))
        ));
        let singular = Mat::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert!(matches!(
            newton_decompose(&[1.0, 0.0], &singular),
            Err(Error::Singular)
        ));
    }

    #[test]
    fn printed_indefinite_counterexample() {
        let a = Mat::diag(&[1.0, -2.0]);
        let r = lemma_b1(&a, &[1.0, 3.0], 0, 1).unwrap();
        assert_eq!(r.lhs, 100.0);
        assert!((r.rhs - 59.5).abs() < 1e-12);
        assert!(!r.holds);
    }

    #[test]
    fn b2_and_b3_on_the_diagonal_example() {
        // w = (1, 1) gives ∇L = (1, 4); the only unit directions orthogonal to it are ±(4, −1)/√17
        let q = QuadraticSpec::homogeneous(Mat::diag(&[1.0, 4.0])).unwrap();
        let b2 = check_prop_b2(&q, &[vec![1.0, 1.0]]).unwrap();
        assert!(b2.passed() && b2.worst > 0.0);
        let b3 = check_prop_b3(&q, &[vec![1.0, 1.0]], &mut seeded(0)).unwrap();
        assert_eq!(b3.checked, 1);
        assert!(b3.worst.abs() < 1e-12, "gap {}", b3.worst);
    }

    #[test]
    fn isotropic_samples_are_skipped_by_b3() {
        let q = QuadraticSpec::homogeneous(Mat::identity(3).scale(2.0)).unwrap();
        let r = check_prop_b3(&q, &[vec![1.0, 2.0, 3.0]], &mut seeded(0)).unwrap();
        assert_eq!((r.checked, r.skipped), (0, 1));
        let b2 = check_prop_b2(&q, &[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(b2.worst, 0.0);
    }
}
