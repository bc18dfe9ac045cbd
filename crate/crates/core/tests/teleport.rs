use teleport_core::autodiff::fd_gradient;
use teleport_core::metrics::protocol_radii;
use teleport_core::models::*;
use teleport_core::rng::seeded;
use teleport_core::symmetry::{act_tape, act_v2, ActionKind, GroupElement};
use teleport_core::teleport::*;
use teleport_core::{Error, Mat, Tape64};

fn synthetic(seed: u64) -> (MlpArch, MlpParams, Batch) {
    let mut rng = seeded(seed);
    let arch = MlpArch::new(vec![5, 6, 7, 8], LossKind::Mse).unwrap();
    let params = MlpParams::init(&arch, Init::Uniform01, &mut rng);
    let batch = uniform_regression(5, 8, 4, &mut rng).unwrap();
    (arch, params, batch)
}

#[test]
fn zero_rate_is_a_bit_identical_no_op() {
    let (arch, params, batch) = synthetic(1);
    let cfg = TeleportConfig {
        lr: 0.0,
        batches: 1,
        ..Default::default()
    };
    let (out, report) = teleport(&arch, &params, &[batch], &cfg, &mut seeded(2)).unwrap();
    assert_eq!(out, params);
    assert_eq!(report.drift, 0.0);
    assert!(report
        .segments
        .iter()
        .all(|s| s.trajectory.len() == cfg.steps));
}

#[test]
fn grad_norm_ascent_on_square_invertible_data() {
    for seed in 0..10 {
        let mut rng = seeded(seed);
        let arch = MlpArch::new(vec![3, 3, 2], LossKind::Mse).unwrap();
        let params = MlpParams::init(&arch, Init::Uniform01, &mut rng);
        let batch = uniform_regression(3, 2, 3, &mut rng).unwrap();
        let cfg = TeleportConfig {
            batches: 1,
            ..Default::default()
        };
        let (_, r) = teleport(&arch, &params, &[batch], &cfg, &mut rng).unwrap();
        assert!(
            r.grad_norm_after >= r.grad_norm_before - 1e-12,
            "seed {seed}: {r:?}"
        );
        assert!(r.drift < 1e-6, "seed {seed}: drift {}", r.drift);
        for s in &r.segments {
            assert!(s.trajectory.windows(2).all(|w| w[1] >= w[0]));
            assert!(s.trajectory[0] >= s.objective_before);
        }
    }
}

#[test]
fn circular_level_sets_give_a_flat_objective() {
    let e = RotationEllipse {
        lambda: 1.0,
        w: [0.6, -0.8],
    };
    let r = teleport_orbit(&e, &Objective::GradNorm, 5e-2, 20, &mut seeded(0)).unwrap();
    assert!(r.g.item().abs() < 1e-10, "g drifted to {}", r.g.item());
    assert!((r.objective_after - r.objective_before).abs() < 1e-14);
}

#[test]
fn mahalanobis_with_unit_weights_matches_grad_norm() {
    let (arch, params, batch) = synthetic(3);
    let cfg = TeleportConfig {
        batches: 1,
        ..Default::default()
    };
    let ones: Vec<Mat> = params
        .weights
        .iter()
        .map(|w| Mat::from_fn(w.rows(), w.cols(), |_, _| 1.0))
        .collect();
    let (a, ra) = teleport(&arch, &params, &[batch.clone()], &cfg, &mut seeded(4)).unwrap();
    let m_cfg = TeleportConfig {
        objective: Objective::MahalanobisGradNorm,
        ..cfg
    };
    let (b, rb) =
        teleport_mahalanobis(&arch, &params, &[batch], &m_cfg, &ones, &mut seeded(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.grad_norm_after, rb.grad_norm_after);
}

#[test]
fn mahalanobis_rejects_mismatched_weights() {
    let (arch, params, batch) = synthetic(3);
    let cfg = TeleportConfig {
        objective: Objective::MahalanobisGradNorm,
        batches: 1,
        ..Default::default()
    };
    let short = vec![Mat::identity(2)];
    assert!(teleport_mahalanobis(&arch, &params, &[batch], &cfg, &short, &mut seeded(0)).is_err());
}

#[test]
fn one_huge_weight_dominates_the_ascent_direction() {
    let (arch, params, batch) = synthetic(5);
    let (pair, block, entry) = (1, 0, 7);
    let big = 1e8;
    let weights: Vec<Mat> = params
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut a = Mat::from_fn(w.rows(), w.cols(), |_, _| 1.0);
            if i == block {
                a.as_mut_slice()[entry] = big;
            }
            a
        })
        .collect();
    let fwd = mlp_forward(&arch, &params, &batch.x).unwrap();
    let d = arch.dims[pair];
    let mut tape = Tape64::new();
    let g = tape.variable(Mat::identity(d));
    let ws = act_tape(ActionKind::V2, &arch, &mut tape, g, pair, &params, &fwd).unwrap();
    let x = tape.constant(batch.x.clone());
    let out = forward_tape(&arch, &mut tape, &ws, x).unwrap();
    let l = loss_tape(arch.loss, &mut tape, out, &batch.y).unwrap();
    let (_, grads) = tape
        .gradient_of_weighted_grad_norm(l, &ws, Some(&weights), &[g])
        .unwrap();
    let direction = &grads[0];

    // oracle: finite differences of the single dominant term ½·big·(∂L/∂w_entry)²
    let dominant = |flat: &[f64]| {
        let elem = GroupElement::new(pair, Mat::new(d, d, flat.to_vec())?)?;
        let moved = act_v2(&arch, &elem, &params, &batch.x)?;
        let (_, gr) = loss_and_grad(&arch, &moved, &batch)?;
        Ok(0.5 * big * gr[block].as_slice()[entry].powi(2))
    };
    let fd = fd_gradient(dominant, Mat::identity(d).as_slice(), None).unwrap();
    let fd = Mat::new(d, d, fd).unwrap();
    let cos = direction.dot(&fd).unwrap() / (direction.frobenius_norm() * fd.frobenius_norm());
    assert!(cos > 0.999, "cosine {cos}");
}

#[test]
fn sharpness_needs_directions() {
    let (arch, params, batch) = synthetic(0);
    let cfg = TeleportConfig {
        objective: Objective::Sharpness {
            radii: protocol_radii(),
            directions: 0,
            sign: Sign::Decrease,
        },
        ..Default::default()
    };
    let err = teleport_sharpness(&arch, &params, &batch, &cfg, &mut seeded(0)).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
}

#[test]
fn sharpness_descent_moves_toward_the_flat_point_of_a_basin() {
    let model = TwoBasin { x: 4.0, y: 0.25 };
    let objective = Objective::Sharpness {
        radii: vec![0.05, 0.1],
        directions: 64,
        sign: Sign::Decrease,
    };
    let r = teleport_orbit(&model, &objective, 5e-3, 10, &mut seeded(1)).unwrap();
    assert!(
        r.trajectory.windows(2).all(|w| w[1] < w[0]),
        "{:?}",
        r.trajectory
    );
    assert!(r.objective_after < r.objective_before);
    let gap = |p: &[f64]| (p[0].abs() - p[1].abs()).abs();
    assert!(gap(&r.point) < gap(&[model.x, model.y]));
    assert!((r.point[0] * r.point[1] - 1.0).abs() < 1e-12);
}

#[test]
fn curvature_descent_widens_the_circle_orbit() {
    let model = CircleOrbit {
        u: [3.0, 4.0],
        s: 0.04,
    };
    let objective = Objective::Curvature {
        k: 1,
        sign: Sign::Decrease,
    };
    let r = teleport_orbit(&model, &objective, 5e-2, 5, &mut seeded(2)).unwrap();
    let radius = (r.point[0].powi(2) + r.point[1].powi(2)).sqrt();
    assert!(radius > 5.0, "radius {radius}");
    assert!(r.objective_after < r.objective_before);
    assert!((r.loss_after - r.loss_before).abs() < 1e-12);

    let still = teleport_orbit(&model, &objective, 0.0, 5, &mut seeded(2)).unwrap();
    assert_eq!(still.point, vec![3.0, 4.0, 0.04]);
}

#[test]
fn mlp_curvature_and_sharpness_descend() {
    for seed in 0..3 {
        let (arch, params, batch) = synthetic(seed);
        let cfg = TeleportConfig {
            objective: Objective::Curvature {
                k: 1,
                sign: Sign::Decrease,
            },
            steps: 1,
            pairs: vec![1],
            ..Default::default()
        };
        let (_, r) = teleport_curvature(&arch, &params, &batch, &cfg, &mut seeded(seed)).unwrap();
        let s = &r.segments[0];
        assert!(s.objective_after < s.objective_before, "seed {seed}: {s:?}");

        let cfg = TeleportConfig {
            objective: Objective::Sharpness {
                radii: protocol_radii(),
                directions: 50,
                sign: Sign::Decrease,
            },
            steps: 3,
            pairs: vec![1],
            ..Default::default()
        };
        let (_, r) = teleport_sharpness(&arch, &params, &batch, &cfg, &mut seeded(seed)).unwrap();
        let s = &r.segments[0];
        assert!(s.objective_after < s.objective_before, "seed {seed}: {s:?}");
        assert!(r.drift < 1e-6);
    }
}

#[test]
fn curvature_zero_rate_leaves_params() {
    let (arch, params, batch) = synthetic(4);
    let cfg = TeleportConfig {
        objective: Objective::Curvature {
            k: 2,
            sign: Sign::Decrease,
        },
        lr: 0.0,
        ..Default::default()
    };
    let (out, _) = teleport_curvature(&arch, &params, &batch, &cfg, &mut seeded(0)).unwrap();
    assert_eq!(out, params);
}

#[test]
fn invalid_pairs_are_rejected() {
    let (arch, params, batch) = synthetic(0);
    let mut rng = seeded(0);
    for pair in [0, 3] {
        let cfg = TeleportConfig {
            pairs: vec![pair],
            ..Default::default()
        };
        assert!(teleport(&arch, &params, &[batch.clone()], &cfg, &mut rng).is_err());
    }
}
