use proptest::prelude::*;
use rand::Rng;
use teleport_core::autodiff::{fd_hessian, fd_jet};
use teleport_core::linalg::{condition_estimate, pseudoinverse_apply, symmetric_eigenvalues};
use teleport_core::models::{QuadraticSpec, ScalarField};
use teleport_core::rng::seeded;
use teleport_core::Mat;

fn random_symmetric(n: usize, seed: u64) -> Mat {
    let mut rng = seeded(seed);
    let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    a.add(&a.transpose()).unwrap().scale(0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn eigenvalues_preserve_trace_and_frobenius(seed in 0u64..1_000_000, n in 2usize..21) {
        let h = random_symmetric(n, seed);
        let e = symmetric_eigenvalues(&h).unwrap();
        prop_assert_eq!(e.eigenvalues.len(), n);
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let tr: f64 = e.eigenvalues.iter().sum();
        let fro: f64 = e.eigenvalues.iter().map(|l| l * l).sum();
        prop_assert!((tr - h.trace()).abs() <= 1e-8 * h.trace().abs().max(1.0));
        prop_assert!((fro - h.frobenius_norm_sq()).abs() <= 1e-8 * h.frobenius_norm_sq());
    }

    #[test]
    fn pseudoinverse_is_a_left_inverse_on_full_column_rank(seed in 0u64..1_000_000, extra in 0usize..4, c in 1usize..5) {
        let mut rng = seeded(seed);
        let r = c + extra;
        let a = Mat::from_fn(r, c, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.4..0.4));
        prop_assume!(condition_estimate(&a.t_matmul(&a).unwrap()).sqrt() <= 1e6);
        let b = Mat::from_fn(3, c, |_, _| rng.random_range(-1.0..1.0));
        let back = pseudoinverse_apply(&a, &b).unwrap().matmul(&a).unwrap();
        prop_assert!(back.sub(&b).unwrap().max_abs() < 1e-6);
    }

    #[test]
    fn fd_hessian_recovers_quadratic(seed in 0u64..1_000_000, n in 1usize..6) {
        let mut rng = seeded(seed);
        let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = m.t_matmul(&m).unwrap().add(&Mat::identity(n)).unwrap();
        let spec = QuadraticSpec::homogeneous(a.clone()).unwrap();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h = fd_hessian(|x| Ok(spec.gradient(x)), &w, None).unwrap();
        prop_assert!(h.sub(&a).unwrap().max_abs() < 1e-5);
    }
}

#[test]
fn fd_jet_of_monomials() {
    let [d1, d2, d3] = fd_jet(|t: f64| Ok(vec![t, t * t, t * t * t]), None).unwrap();
    for (got, want) in [
        (d1, [1.0, 0.0, 0.0]),
        (d2, [0.0, 2.0, 0.0]),
        (d3, [0.0, 0.0, 6.0]),
    ] {
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-5, "{got:?} vs {want:?}");
        }
    }
}
