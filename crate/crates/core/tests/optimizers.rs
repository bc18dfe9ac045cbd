use rand::Rng;
use teleport_core::models::*;
use teleport_core::optimizers::*;
use teleport_core::rng::{seeded, stream, streams};
use teleport_core::symmetry::{ActionKind, AppliedAction};
use teleport_core::teleport::TeleportConfig;
use teleport_core::Mat;

/// ½wᵀAw with A = diag(2, 4), starting at w = (1, −2): ∇L = (2, −8).
fn quadratic_grad(w: &MlpParams) -> Vec<Mat> {
    let s = w.weights[0].as_slice();
    vec![Mat::new(1, 2, vec![2.0 * s[0], 4.0 * s[1]]).unwrap()]
}

fn start() -> MlpParams {
    MlpParams::new(vec![Mat::new(1, 2, vec![1.0, -2.0]).unwrap()])
}

fn steps(opt: Optimizer, n: usize) -> Vec<f64> {
    let mut w = start();
    let mut state = OptimizerState::new(&opt, &w);
    for _ in 0..n {
        let g = quadratic_grad(&w);
        state.step(&opt, &mut w, &g).unwrap();
    }
    w.weights[0].as_slice().to_vec()
}

fn close(got: &[f64], want: &[f64]) {
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn sgd_single_step() {
    close(&steps(Optimizer::sgd(0.1), 1), &[0.8, -1.2]);
}

#[test]
fn momentum_two_steps() {
    let opt = Optimizer::Momentum {
        lr: 0.1,
        mu: 0.9,
        transport: Transport::Reset,
    };
    close(&steps(opt, 1), &[0.8, -1.2]);
    // v₂ = 0.9·(2, −8) + (1.6, −4.8) = (3.4, −12)
    close(&steps(opt, 2), &[0.46, 0.0]);
}

#[test]
fn adagrad_single_step() {
    let eps = 1e-10;
    let opt = Optimizer::Adagrad {
        lr: 0.1,
        eps,
        objective: AdagradObjective::L2,
    };
    let want = [
        1.0 - 0.1 * 2.0 / (eps + 4.0f64).sqrt(),
        -2.0 + 0.1 * 8.0 / (eps + 64.0f64).sqrt(),
    ];
    close(&steps(opt, 1), &want);
}

#[test]
fn rmsprop_single_step() {
    let (beta, eps) = (0.99, 1e-8);
    let opt = Optimizer::Rmsprop { lr: 0.1, beta, eps };
    let g2 = [(1.0 - beta) * 4.0, (1.0 - beta) * 64.0];
    let want = [
        1.0 - 0.1 * 2.0 / (eps + g2[0]).sqrt(),
        -2.0 + 0.1 * 8.0 / (eps + g2[1]).sqrt(),
    ];
    close(&steps(opt, 1), &want);
}

#[test]
fn adam_first_step_is_sign_scaled() {
    let eps = 1e-8;
    let opt = Optimizer::Adam {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps,
    };
    // bias correction makes m̂ = g and v̂ = g² on the first step
    let want = [
        1.0 - 0.1 * 2.0 / (2.0 + eps),
        -2.0 + 0.1 * 8.0 / (8.0 + eps),
    ];
    close(&steps(opt, 1), &want);
}

fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let x = Mat::from_fn(6, n, |i, j| {
        let centre = if i % 3 == labels[j] { 1.0 } else { 0.0 };
        centre + 0.3 * rng.random_range(-1.0..1.0)
    });
    Batch::classification(x, labels, 3).unwrap()
}

fn small_arch() -> MlpArch {
    MlpArch::new(vec![6, 5, 4, 3], LossKind::CrossEntropy).unwrap()
}

fn all_optimizers() -> Vec<Optimizer> {
    vec![
        Optimizer::sgd(0.1),
        Optimizer::momentum(0.05),
        Optimizer::adagrad(0.05),
        Optimizer::rmsprop(0.01),
        Optimizer::adam(0.01),
    ]
}

#[test]
fn empty_schedule_is_the_plain_optimizer() {
    let arch = small_arch();
    let data = blobs(60, 1);
    let init = MlpParams::init(&arch, Init::FanIn, &mut seeded(2));
    for opt in all_optimizers() {
        let cfg = TrainConfig::new(opt, 3, 8, 11);
        let (trained, record) = train(&arch, &init, &data, None, &cfg).unwrap();
        assert_eq!(record.epochs.len(), 3);
        assert!(record.teleports.is_empty());

        let mut shuffle = stream(11, streams::SHUFFLE);
        let mut w = init.clone();
        let mut state = OptimizerState::new(&opt, &w);
        for _ in 0..3 {
            for idx in data.epoch_batches(8, &mut shuffle) {
                let (_, g) = loss_and_grad(&arch, &w, &data.select(&idx).unwrap()).unwrap();
                state.step(&opt, &mut w, &g).unwrap();
            }
        }
        assert_eq!(trained, w, "{}", opt.name());
    }
}

#[test]
fn reruns_are_identical() {
    let arch = small_arch();
    let data = blobs(80, 3);
    let (fit, test) = data.split(0.75).unwrap();
    let init = MlpParams::init(&arch, Init::FanIn, &mut seeded(4));
    for opt in all_optimizers() {
        let mut cfg = TrainConfig::new(opt, 3, 10, 5);
        cfg.teleport_epochs = [1].into();
        cfg.teleport = TeleportConfig {
            batches: 2,
            batch_size: 4,
            ..Default::default()
        };
        let a = train(&arch, &init, &fit, Some(&test), &cfg).unwrap();
        let b = train(&arch, &init, &fit, Some(&test), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a.1).unwrap(),
            serde_json::to_string(&b.1).unwrap()
        );
        let flags: Vec<bool> = a.1.epochs.iter().map(|e| e.teleported).collect();
        assert_eq!(flags, vec![false, true, false]);
        assert!(a
            .1
            .epochs
            .iter()
            .all(|e| e.wall_ms == 0 && e.test_loss.is_some()));
    }
}

#[test]
fn zero_epochs_returns_the_initial_params() {
    let arch = small_arch();
    let init = MlpParams::init(&arch, Init::FanIn, &mut seeded(0));
    let cfg = TrainConfig::new(Optimizer::sgd(0.1), 0, 4, 0);
    let (out, record) = train(&arch, &init, &blobs(10, 0), None, &cfg).unwrap();
    assert_eq!(out, init);
    assert!(record.epochs.is_empty());
}

#[test]
fn teleport_epochs_keep_the_batch_loss() {
    let arch = MlpArch::new(vec![5, 6, 7, 8], LossKind::Mse).unwrap();
    let mut rng = seeded(8);
    let data = uniform_regression(5, 8, 40, &mut rng).unwrap();
    let init = MlpParams::init(&arch, Init::Uniform01, &mut rng);
    for transport in [Transport::Transform, Transport::Keep, Transport::Reset] {
        let mut cfg = TrainConfig::new(
            Optimizer::Momentum {
                lr: 1e-3,
                mu: 0.9,
                transport,
            },
            2,
            8,
            9,
        );
        cfg.teleport_epochs = [0].into();
        cfg.teleport = TeleportConfig {
            batches: 3,
            batch_size: 4,
            ..Default::default()
        };
        let (_, record) = train(&arch, &init, &data, None, &cfg).unwrap();
        let report = &record.teleports[0];
        assert!(report.drift < 1e-6, "drift {}", report.drift);
        assert!(report.grad_norm_after >= report.grad_norm_before);
        assert!(record.aborted.is_none());
    }
}

#[test]
fn mahalanobis_teleport_runs_inside_adagrad() {
    let arch = MlpArch::new(vec![5, 6, 7, 8], LossKind::Mse).unwrap();
    let mut rng = seeded(10);
    let data = uniform_regression(5, 8, 40, &mut rng).unwrap();
    let init = MlpParams::init(&arch, Init::Uniform01, &mut rng);
    let opt = Optimizer::Adagrad {
        lr: 1e-3,
        eps: 1e-10,
        objective: AdagradObjective::Mahalanobis,
    };
    let mut cfg = TrainConfig::new(opt, 2, 8, 1);
    cfg.teleport_epochs = [1].into();
    cfg.teleport = TeleportConfig {
        lr: 7.5e-3,
        batches: 2,
        batch_size: 4,
        ..Default::default()
    };
    let (_, record) = train(&arch, &init, &data, None, &cfg).unwrap();
    assert_eq!(record.teleports[0].objective, "mahalanobis-grad-norm");
}

#[test]
fn identity_action_leaves_velocity() {
    let v = vec![
        Mat::from_fn(3, 2, |i, j| (i + 2 * j) as f64),
        Mat::from_fn(2, 3, |i, j| (i * j) as f64 - 1.0),
    ];
    let state = OptimizerState::Momentum { v: v.clone() };
    let id = AppliedAction {
        pair: 1,
        kind: ActionKind::V2,
        g: Mat::identity(3),
        upper: Mat::identity(3),
        lower: Some(Mat::identity(3)),
    };
    let (moved, flags) = transport_momentum(&state, Transport::Transform, &[id]).unwrap();
    assert_eq!(moved, state);
    assert!(flags.is_empty());
}

#[test]
fn non_finite_loss_aborts_with_a_record() {
    let arch = small_arch();
    let init = MlpParams::init(&arch, Init::FanIn, &mut seeded(0));
    let cfg = TrainConfig::new(Optimizer::sgd(1e300), 3, 4, 0);
    let (_, record) = train(&arch, &init, &blobs(20, 0), None, &cfg).unwrap();
    assert!(record.aborted.is_some());
    assert!(record.epochs.len() < 3);
}
