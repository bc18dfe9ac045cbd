use proptest::prelude::*;
use rand::Rng;
use teleport_core::metrics::*;
use teleport_core::models::*;
use teleport_core::optimizers::{Optimizer, TrainConfig};
use teleport_core::rng::{seeded, stream, streams};
use teleport_core::theory::{random_spd, random_vector};
use teleport_core::{Error, Mat};

fn half_quadratic(a: &Mat) -> impl Fn(&[f64]) -> teleport_core::Result<f64> + '_ {
    move |w: &[f64]| {
        let n = w.len();
        Ok(0.5
            * (0..n)
                .map(|i| w[i] * (0..n).map(|j| a.get(i, j) * w[j]).sum::<f64>())
                .sum::<f64>())
    }
}

#[test]
fn centred_quadratic_sharpness_is_the_mean_trace() {
    let mut rng = stream(0, streams::METRICS);
    let n = 6;
    let a = random_spd(n, 50.0, &mut rng);
    let f = half_quadratic(&a);
    for t in [1.0, 0.3] {
        let dirs = unit_directions(n, 100_000, &mut rng);
        let phi = phi_sharpness_with(&f, &vec![0.0; n], &[t], &dirs).unwrap();
        let values: Vec<f64> = dirs
            .iter()
            .map(|d| f(&d.iter().map(|x| t * x).collect::<Vec<_>>()).unwrap())
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        let se = (var / values.len() as f64).sqrt();
        let want = a.trace() / (2.0 * n as f64) * t * t;
        assert!(
            (phi - want).abs() < 3.0 * se,
            "t = {t}: {phi} vs {want} ± {se}"
        );
    }
}

#[test]
fn sharpness_shifts_with_a_constant() {
    let mut rng = seeded(1);
    let a = random_spd(4, 10.0, &mut rng);
    let f = half_quadratic(&a);
    let w = random_vector(4, &mut rng);
    let dirs = unit_directions(4, 50, &mut rng);
    let radii = protocol_radii();
    let base = phi_sharpness_with(&f, &w, &radii, &dirs).unwrap();
    let shifted = phi_sharpness_with(|x: &[f64]| Ok(f(x)? + 3.25), &w, &radii, &dirs).unwrap();
    assert!((shifted - base - 3.25).abs() < 1e-12);
}

#[test]
fn hessian_recovers_quadratics() {
    let mut rng = seeded(2);
    for n in [2, 5, 10] {
        let a = random_spd(n, 1e4, &mut rng);
        let spec = QuadraticSpec::homogeneous(a.clone()).unwrap();
        let w = random_vector(n, &mut rng);
        let h = model_hessian(|x| Ok(spec.gradient(x)), &w).unwrap();
        let err = h.sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(err < 1e-5, "n = {n}: relative error {err}");
        assert_eq!(h.asymmetry().unwrap(), 0.0);
    }
    let linear = model_hessian(|_| Ok(vec![1.0, -2.0, 0.5]), &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!(linear.max_abs(), 0.0);
    let gate = model_hessian(|x| Ok(x.to_vec()), &vec![0.0; 2001]);
    assert!(matches!(gate, Err(Error::DimensionGate { .. })));
}

#[test]
fn two_parameter_mlp_hessian_is_symmetric() {
    let arch = MlpArch::new(vec![1, 1, 1], LossKind::Mse).unwrap();
    let batch = uniform_regression(1, 1, 5, &mut seeded(3)).unwrap();
    let shapes = arch.shapes();
    let grad = |w: &[f64]| {
        let (_, g) = loss_and_grad(&arch, &MlpParams::from_flat(w, &shapes), &batch)?;
        Ok(g.iter().flat_map(|m| m.as_slice().to_vec()).collect())
    };
    let h = model_hessian(grad, &[0.7, -1.3]).unwrap();
    assert_eq!(h.get(0, 1), h.get(1, 0));
}

proptest! {
    #[test]
    fn phi1_is_non_increasing_in_eps(mut eig in prop::collection::vec(0.0f64..500.0, 1..30), e1 in 0.0f64..500.0, e2 in 0.0f64..500.0) {
        eig.sort_by(|a, b| b.total_cmp(a));
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(phi1(&eig, hi) <= phi1(&eig, lo));
    }

    #[test]
    fn phi2_is_non_decreasing_in_k_above_one(mut eig in prop::collection::vec(1.0001f64..1e4, 1..30), k in 1usize..30) {
        eig.sort_by(|a, b| b.total_cmp(a));
        let k = k.min(eig.len());
        if k > 1 {
            prop_assert!(phi2(&eig, k).unwrap() >= phi2(&eig, k - 1).unwrap());
        }
    }

    #[test]
    fn pearson_is_affine_invariant(seed in 0u64..10_000, a in 0.01f64..100.0, b in -100.0f64..100.0) {
        let mut rng = seeded(seed);
        let xs: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + rng.random::<f64>()).collect();
        let r = pearson(&xs, &ys).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!((pearson(&moved, &ys).unwrap() - r).abs() < 1e-12);
        let moved_y: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
        prop_assert!((pearson(&xs, &moved_y).unwrap() - r).abs() < 1e-12);
    }
}

#[test]
fn identical_models_surface_the_zero_variance_error() {
    let record = MetricsRecord {
        model_id: 0,
        phi1: Some(1),
        phi2: None,
        phi: Some(0.5),
        psi: Some(0.1),
        validation_loss: 1.0,
    };
    let records: Vec<MetricsRecord> = (0..3)
        .map(|id| MetricsRecord {
            model_id: id,
            ..record.clone()
        })
        .collect();
    let table = correlation_table(&records);
    let c = table
        .iter()
        .find(|c| c.x == "phi" && c.y == "validation_loss")
        .unwrap();
    assert_eq!(c.n, 3);
    assert_eq!(
        c.error.as_deref(),
        Some(Error::ZeroVariance.to_string().as_str())
    );
}

fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let x = Mat::from_fn(4, n, |i, j| {
        let centre = if i % 3 == labels[j] { 1.0 } else { 0.0 };
        centre + 0.5 * rng.random_range(-1.0..1.0)
    });
    Batch::classification(x, labels, 3).unwrap()
}

fn small_study(models: usize, lr: f64) -> (MlpArch, Dataset, Dataset, PopulationConfig) {
    let arch = MlpArch::new(vec![4, 6, 5, 3], LossKind::CrossEntropy).unwrap();
    let (train, val) = blobs(100, 4).split(0.8).unwrap();
    let mut cfg = PopulationConfig::paper(models, 5);
    cfg.train = TrainConfig::new(Optimizer::sgd(lr), 5, 20, 0);
    cfg.directions = 20;
    (arch, train, val, cfg)
}

#[test]
fn study_is_reproducible_and_fills_small_model_metrics() {
    let (arch, train, val, cfg) = small_study(4, 0.05);
    let a = correlation_study(&arch, &train, &val, &cfg, &mut seeded(5)).unwrap();
    let b = correlation_study(&arch, &train, &val, &cfg, &mut seeded(5)).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(a.records.len(), 4);
    assert!(a.skipped.is_empty());
    for r in &a.records {
        assert!(r.phi1.is_some() && r.phi.unwrap().is_finite() && r.psi.unwrap().is_finite());
    }
    assert_eq!(a.correlations.len(), 10);
}

#[test]
fn diverging_models_are_skipped_with_a_reason() {
    let (arch, train, val, cfg) = small_study(3, 1e300);
    let r = correlation_study(&arch, &train, &val, &cfg, &mut seeded(6)).unwrap();
    assert_eq!(r.skipped.len(), 3);
    assert!(r.records.is_empty());
    assert!(r.skipped.iter().all(|s| !s.reason.is_empty()));
}

#[test]
fn sharpness_tracks_validation_loss_on_synthetic_data() {
    let (arch, train, val, cfg) = small_study(20, 0.05);
    let r = correlation_study(&arch, &train, &val, &cfg, &mut seeded(7)).unwrap();
    let rho = r.r("phi", "validation_loss").unwrap();
    assert!(rho > 0.0, "r = {rho}");
}
