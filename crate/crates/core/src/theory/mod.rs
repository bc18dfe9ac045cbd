//! Executable checks of the propositions behind teleportation: the Newton-direction
//! decomposition, Lie-bracket optimality on level sets, one-teleport optimality for quadratics,
//! and the minima-shift Monte Carlo.

mod bracket;
mod flow;
mod newton;
mod shift;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::Mat;

pub use bracket::{
    antisymmetric_basis, bracket_residual, bracket_value, flow_bracket_derivative,
    orthogonal_span_rank,
};
pub use flow::{
    gradient_flow, level_set_teleport, newton_equivalence_test, one_teleport_flow_test, FlowReport,
    LevelSetTeleport, NewtonEquivalence,
};
pub use newton::{
    check_prop_b2, check_prop_b3, lemma_b1, newton_decompose, Counterexample, LemmaB1,
    NewtonDecomposition, PropReport,
};
pub use shift::{minima_shift_mc, ShiftCurve, ShiftReport};

/// Random symmetric positive definite matrix `Q diag(λ) Qᵀ` with eigenvalues log-uniform in
/// `[1, cond]` and `Q` from Gram–Schmidt on a Gaussian matrix.
pub fn random_spd<R: Rng + ?Sized>(n: usize, cond: f64, rng: &mut R) -> Mat {
    let q = random_orthogonal(n, rng);
    let eig: Vec<f64> = (0..n).map(|_| cond.powf(rng.random::<f64>())).collect();
    Mat::from_fn(n, n, |i, j| {
        (0..n).map(|k| q.get(i, k) * eig[k] * q.get(j, k)).sum()
    })
}

fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let p = dot(&v, c);
            v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            cols.push(v.iter().map(|x| x / norm).collect());
        }
    }
    Mat::from_fn(n, n, |i, j| cols[j][i])
}

pub fn random_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mat_vec(a: &Mat, v: &[f64]) -> Vec<f64> {
    (0..a.rows()).map(|i| dot(a.row_slice(i), v)).collect()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use crate::rng::seeded;

    #[test]
    fn random_spd_has_the_requested_spectrum_range() {
        let mut rng = seeded(0);
        for n in 1..6 {
            let a = random_spd(n, 100.0, &mut rng);
            assert!(a.asymmetry().unwrap() < 1e-12);
            let eig = symmetric_eigenvalues(&a).unwrap().eigenvalues;
            assert!(
                eig.iter()
                    .all(|&l| (1.0 - 1e-9..=100.0 + 1e-9).contains(&l)),
                "{eig:?}"
            );
        }
    }
}
