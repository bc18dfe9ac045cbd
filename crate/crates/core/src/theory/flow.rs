use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve, symmetric_eigenvalues};
use crate::models::{QuadraticSpec, ScalarField};
use crate::theory::bracket::bracket_residual;
use crate::theory::{dot, mat_vec, norm};
use crate::Mat;

/// Bracket residual below which a level-set point counts as a critical point of ‖∇L‖².
pub const TELEPORT_TOLERANCE: f64 = 1e-8;
/// Bracket residual allowed along the gradient flow from a teleported point.
pub const FLOW_TOLERANCE: f64 = 1e-6;
const MAX_TELEPORT_ITERS: usize = 200_000;

/// Result of moving along a level set to a critical point of ‖∇L‖².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetTeleport {
    pub point: Vec<f64>,
    pub iterations: usize,
    pub grad_norm_sq_before: f64,
    pub grad_norm_sq_after: f64,
    pub residual: f64,
}

fn grad_norm_sq(field: &dyn ScalarField, w: &[f64]) -> f64 {
    let g = field.gradient(w);
    dot(&g, &g)
}

/// Newton iterations along ∇L back onto `{L = level}`.
fn retract(field: &dyn ScalarField, w: &[f64], level: f64) -> Vec<f64> {
    let mut p = w.to_vec();
    for _ in 0..50 {
        let gap = field.value(&p) - level;
        if gap.abs() <= 1e-15 * level.abs().max(1.0) {
            break;
        }
        let g = field.gradient(&p);
        let gg = dot(&g, &g);
        if gg == 0.0 {
            break;
        }
        p.iter_mut().zip(&g).for_each(|(x, gi)| *x -= gap / gg * gi);
    }
    p
}

/// Component of `H∇L` orthogonal to ∇L: the ascent direction of ‖∇L‖² along the level set.
fn tangent_part(field: &dyn ScalarField, w: &[f64]) -> Vec<f64> {
    let g = field.gradient(w);
    let hg = mat_vec(&field.hessian(w), &g);
    let gg = dot(&g, &g);
    if gg == 0.0 {
        return vec![0.0; w.len()];
    }
    let c = dot(&hg, &g) / gg;
    hg.iter().zip(&g).map(|(a, b)| a - c * b).collect()
}

/// Ascends ‖∇L‖² on the level set of `w0` until the bracket residual over the antisymmetric
/// basis falls below `tol`.
///
/// Each step moves along the tangential part of `H∇L`, then projects back onto the level set.
/// A step is accepted when it raises ‖∇L‖² by more than roundoff, or keeps it within roundoff
/// while shrinking that ascent direction. The step length grows after an accepted step and
/// halves after a rejected one.
pub fn level_set_teleport(
    field: &dyn ScalarField,
    w0: &[f64],
    tol: f64,
) -> Result<LevelSetTeleport> {
    let level = field.value(w0);
    let before = grad_norm_sq(field, w0);
    let mut w = w0.to_vec();
    let mut f = before;
    let mut residual = bracket_residual(field, &w)?;
    let h_scale = field.hessian(w0).frobenius_norm().max(1e-300);
    let mut eta = 0.1 / (h_scale * h_scale);
    let mut iterations = 0;
    let mut tangent = tangent_part(field, &w);
    while residual >= tol {
        if iterations == MAX_TELEPORT_ITERS || eta < 1e-300 {
            return Err(Error::NoConvergence(iterations));
        }
        iterations += 1;
        let stepped: Vec<f64> = w.iter().zip(&tangent).map(|(x, t)| x + eta * t).collect();
        let cand = retract(field, &stepped, level);
        if !cand.iter().all(|x| x.is_finite()) {
            eta *= 0.5;
            continue;
        }
        let f_new = grad_norm_sq(field, &cand);
        let t_new = tangent_part(field, &cand);
        let roundoff = 8.0 * f64::EPSILON * f.abs();
        if f_new > f + roundoff || (f_new >= f - roundoff && norm(&t_new) < norm(&tangent)) {
            w = cand;
            f = f_new;
            tangent = t_new;
            residual = bracket_residual(field, &w)?;
            eta *= 1.5;
        } else {
            eta *= 0.5;
        }
    }
    Ok(LevelSetTeleport {
        point: w,
        iterations,
        grad_norm_sq_before: before,
        grad_norm_sq_after: f,
        residual,
    })
}

/// Classical RK4 on `ẇ = −∇L`; the returned trajectory starts with `w0` and has `steps + 1` points.
pub fn gradient_flow(
    field: &dyn ScalarField,
    w0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let rhs = |w: &[f64]| -> Vec<f64> { field.gradient(w).iter().map(|g| -g).collect() };
    let axpy = |w: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
        w.iter().zip(k).map(|(x, y)| x + a * y).collect()
    };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(w0.to_vec());
    let mut w = w0.to_vec();
    for step in 0..steps {
        let k1 = rhs(&w);
        let k2 = rhs(&axpy(&w, 0.5 * dt, &k1));
        let k3 = rhs(&axpy(&w, 0.5 * dt, &k2));
        let k4 = rhs(&axpy(&w, dt, &k3));
        for i in 0..w.len() {
            w[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !w.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient flow left the domain at step {}",
                step + 1
            )));
        }
        out.push(w.clone());
    }
    Ok(out)
}

fn check_strictly_convex(spec: &QuadraticSpec) -> Result<Vec<f64>> {
    let eig = symmetric_eigenvalues(&spec.a)?.eigenvalues;
    if eig.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "quadratic is not strictly convex: eigenvalues {eig:?}"
        )));
    }
    Ok(eig)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub teleport: LevelSetTeleport,
    pub max_residual_along_flow: f64,
    pub final_point: Vec<f64>,
    pub passed: bool,
}

/// Teleports `w0` to a level-set critical point of ‖∇L‖², follows the gradient flow from there
/// and records the largest bracket residual seen along the way.
pub fn one_teleport_flow_test(
    spec: &QuadraticSpec,
    w0: &[f64],
    steps: usize,
    dt: f64,
) -> Result<FlowReport> {
    check_strictly_convex(spec)?;
    let teleport = level_set_teleport(spec, w0, TELEPORT_TOLERANCE)?;
    let path = gradient_flow(spec, &teleport.point, dt, steps)?;
    let mut worst: f64 = 0.0;
    for w in &path {
        worst = worst.max(bracket_residual(spec, w)?);
    }
    Ok(FlowReport {
        teleport,
        max_residual_along_flow: worst,
        final_point: path.last().cloned().unwrap_or_default(),
        passed: worst < FLOW_TOLERANCE,
    })
}

/// Whether one gradient step after teleporting is a damped Newton step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonEquivalence {
    pub point: Vec<f64>,
    /// Rayleigh quotient `∇LᵀH∇L / ‖∇L‖²` at the teleported point.
    pub lambda0: f64,
    pub lambda_max: f64,
    /// `‖H∇L − λ₀∇L‖ / ‖∇L‖`
    pub eigen_residual: f64,
    /// Distance between `w′ − γ∇L` and `w′ − γλ₀H⁻¹∇L`.
    pub step_gap: f64,
    /// The teleported point is a minimizer, so there is no step to compare.
    pub skipped: bool,
    pub passed: bool,
}

pub fn newton_equivalence_test(
    spec: &QuadraticSpec,
    w0: &[f64],
    gamma: f64,
) -> Result<NewtonEquivalence> {
    let eig = check_strictly_convex(spec)?;
    let lambda_max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let teleport = level_set_teleport(spec, w0, TELEPORT_TOLERANCE)?;
    let w = teleport.point;
    let g = spec.gradient(&w);
    let gn = norm(&g);
    if gn < 1e-12 {
        return Ok(NewtonEquivalence {
            point: w,
            lambda0: 0.0,
            lambda_max,
            eigen_residual: 0.0,
            step_gap: 0.0,
            skipped: true,
            passed: true,
        });
    }
    let h = spec.hessian(&w);
    let hg = mat_vec(&h, &g);
    let lambda0 = dot(&g, &hg) / (gn * gn);
    let eigen_residual = norm(
        &hg.iter()
            .zip(&g)
            .map(|(a, b)| a - lambda0 * b)
            .collect::<Vec<_>>(),
    ) / gn;
    let newton = solve(&h, &Mat::column(&g)?)?.into_vec();
    let step_gap = gamma
        * norm(
            &g.iter()
                .zip(&newton)
                .map(|(gi, ni)| gi - lambda0 * ni)
                .collect::<Vec<_>>(),
        );
    let passed = eigen_residual < 1e-6 && lambda0 >= 0.0 && lambda0 <= lambda_max * (1.0 + 1e-12);
    Ok(NewtonEquivalence {
        point: w,
        lambda0,
        lambda_max,
        eigen_residual,
        step_gap,
        skipped: false,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_matches_the_closed_form_flow() {
        let spec = QuadraticSpec::homogeneous(Mat::diag(&[1.0, 4.0, 0.5])).unwrap();
        let w0 = [1.0, -2.0, 0.3];
        let path = gradient_flow(&spec, &w0, 1e-3, 10_000).unwrap();
        let t: f64 = 10.0;
        let exact: Vec<f64> = [1.0f64, 4.0, 0.5]
            .iter()
            .zip(&w0)
            .map(|(a, w)| w * (-a * t).exp())
            .collect();
        for (p, e) in path[10_000].iter().zip(&exact) {
            assert!((p - e).abs() < 1e-8, "{p} vs {e}");
        }
    }

    #[test]
    fn retraction_lands_on_the_level_set() {
        let spec = QuadraticSpec::ellipse(2.0);
        let p = retract(&spec, &[1.3, 0.4], 1.0);
        assert!((spec.value(&p) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_convex_specs_are_rejected() {
        let spec = QuadraticSpec::homogeneous(Mat::diag(&[1.0, -2.0])).unwrap();
        assert!(matches!(
            one_teleport_flow_test(&spec, &[1.0, 1.0], 10, 1e-3),
            Err(Error::InvalidConfig(_))
        ));
    }
}
