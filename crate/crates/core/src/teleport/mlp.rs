use rand::Rng;

use crate::autodiff::{fd_gradient, NodeId};
use crate::error::{Error, Result};
use crate::metrics::{phi_sharpness_with, unit_directions};
use crate::models::{
    forward_tape, loss, loss_and_grad, loss_tape, mlp_forward, Batch, Forward, MlpArch, MlpParams,
};
use crate::symmetry::{act_tape, psi_with, ActionKind, AppliedAction, GroupElement, LieCoordinate};
use crate::symmetry::{act_v1_with, act_v2_with};
use crate::teleport::{ascend, Objective, SegmentReport, TeleportConfig, TeleportReport};
use crate::{Mat, Tape64};

/// Teleports with the objective named in `cfg` (gradient norm, sharpness or curvature).
///
/// Each batch is processed in turn, and within it each layer pair: the group element starts at
/// the identity, takes `cfg.steps` guarded steps, and the resulting action is applied before the
/// next pair sees the updated parameters.
pub fn teleport<R: Rng + ?Sized>(
    arch: &MlpArch,
    params: &MlpParams,
    batches: &[Batch],
    cfg: &TeleportConfig,
    rng: &mut R,
) -> Result<(MlpParams, TeleportReport)> {
    if cfg.objective == Objective::MahalanobisGradNorm {
        return Err(Error::InvalidConfig(
            "the Mahalanobis objective needs objective weights; use teleport_mahalanobis".into(),
        ));
    }
    run(arch, params, batches, cfg, None, rng)
}

/// Teleports maximizing ½∇Lᵀ A ∇L, with `weights[i]` the diagonal of A for `weights[i]`'s block.
pub fn teleport_mahalanobis<R: Rng + ?Sized>(
    arch: &MlpArch,
    params: &MlpParams,
    batches: &[Batch],
    cfg: &TeleportConfig,
    weights: &[Mat],
    rng: &mut R,
) -> Result<(MlpParams, TeleportReport)> {
    if weights.len() != params.weights.len() {
        return Err(Error::InvalidConfig(format!(
            "{} objective weight blocks for {} layers",
            weights.len(),
            params.weights.len()
        )));
    }
    for (a, w) in weights.iter().zip(&params.weights) {
        a.same_shape(w, "mahalanobis-weights")?;
        if a.as_slice().iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain(
                "Mahalanobis weights must be strictly positive".into(),
            ));
        }
    }
    let cfg = TeleportConfig {
        objective: Objective::MahalanobisGradNorm,
        ..cfg.clone()
    };
    run(arch, params, batches, &cfg, Some(weights), rng)
}

/// Teleports on sharpness φ; `cfg.objective` must be [`Objective::Sharpness`].
pub fn teleport_sharpness<R: Rng + ?Sized>(
    arch: &MlpArch,
    params: &MlpParams,
    batch: &Batch,
    cfg: &TeleportConfig,
    rng: &mut R,
) -> Result<(MlpParams, TeleportReport)> {
    if !matches!(cfg.objective, Objective::Sharpness { .. }) {
        return Err(Error::InvalidConfig(
            "teleport_sharpness needs a sharpness objective".into(),
        ));
    }
    run(arch, params, std::slice::from_ref(batch), cfg, None, rng)
}

/// Teleports on curvature ψ; `cfg.objective` must be [`Objective::Curvature`].
///
/// ∇_g ψ is taken by central differences over the entries of g with the curves held fixed.
pub fn teleport_curvature<R: Rng + ?Sized>(
    arch: &MlpArch,
    params: &MlpParams,
    batch: &Batch,
    cfg: &TeleportConfig,
    rng: &mut R,
) -> Result<(MlpParams, TeleportReport)> {
    if !matches!(cfg.objective, Objective::Curvature { .. }) {
        return Err(Error::InvalidConfig(
            "teleport_curvature needs a curvature objective".into(),
        ));
    }
    run(arch, params, std::slice::from_ref(batch), cfg, None, rng)
}

fn batch_stats(arch: &MlpArch, params: &MlpParams, batches: &[Batch]) -> Result<(f64, f64)> {
    let (mut l, mut g) = (0.0, 0.0);
    for b in batches {
        let (v, grads) = loss_and_grad(arch, params, b)?;
        l += v;
        g += grads
            .iter()
            .map(|m| m.frobenius_norm_sq())
            .sum::<f64>()
            .sqrt();
    }
    let n = batches.len() as f64;
    Ok((l / n, g / n))
}

/// Relative loss change beyond which a candidate is treated as numerically degenerate, in the
/// regime where the action is exactly loss-preserving.
const DRIFT_GUARD: f64 = 1e-9;

/// Everything an objective needs about the current segment.
struct Segment<'a> {
    arch: &'a MlpArch,
    params: &'a MlpParams,
    fwd: Forward,
    batch: &'a Batch,
    pair: usize,
    kind: ActionKind,
}

impl Segment<'_> {
    fn apply(&self, g: &Mat) -> Result<(MlpParams, AppliedAction)> {
        let elem = GroupElement::new(self.pair, g.clone())?;
        match self.kind {
            ActionKind::V1 => act_v1_with(self.arch, &elem, self.params, &self.fwd),
            ActionKind::V2 => act_v2_with(self.arch, &elem, self.params, &self.fwd),
        }
    }

    /// Whether the action preserves the batch loss exactly: the batch is no wider than the
    /// layer whose activations get pseudo-inverted.
    fn exact_regime(&self) -> bool {
        let width = match self.kind {
            ActionKind::V1 => self.arch.dims[self.pair - 1],
            ActionKind::V2 => self.arch.dims[self.pair],
        };
        self.batch.len() <= width
    }

    /// Records the moved weights on a fresh tape as functions of `g`.
    fn tape(&self, g: &Mat) -> Result<(Tape64, NodeId, Vec<NodeId>)> {
        let mut tape = Tape64::new();
        let gn = tape.variable(g.clone());
        let ws = act_tape(
            self.kind,
            self.arch,
            &mut tape,
            gn,
            self.pair,
            self.params,
            &self.fwd,
        )?;
        Ok((tape, gn, ws))
    }
}

enum Evaluator<'a> {
    GradNorm(Option<&'a [Mat]>),
    Sharpness {
        radii: &'a [f64],
        dirs: &'a [Vec<f64>],
    },
    Curvature(Vec<LieCoordinate>),
}

impl Evaluator<'_> {
    fn value(&self, seg: &Segment, g: &Mat) -> Result<f64> {
        let (p, _) = seg.apply(g)?;
        self.value_at(seg, &p)
    }

    fn value_at(&self, seg: &Segment, p: &MlpParams) -> Result<f64> {
        match self {
            Evaluator::GradNorm(weights) => {
                let (_, grads) = loss_and_grad(seg.arch, p, seg.batch)?;
                let mut total = 0.0;
                for (i, gr) in grads.iter().enumerate() {
                    total += match weights {
                        Some(a) => gr.hadamard(&a[i])?.dot(gr)?,
                        None => gr.frobenius_norm_sq(),
                    };
                }
                Ok(0.5 * total)
            }
            Evaluator::Sharpness { radii, dirs } => {
                let shapes = p.shapes();
                phi_sharpness_with(
                    |flat| loss(seg.arch, &MlpParams::from_flat(flat, &shapes), seg.batch),
                    &p.flatten(),
                    radii,
                    dirs,
                )
            }
            Evaluator::Curvature(samples) => {
                psi_with(seg.arch, p, seg.batch, samples).map(|(v, _)| v)
            }
        }
    }

    fn gradient(&self, seg: &Segment, g: &Mat) -> Result<Mat> {
        match self {
            Evaluator::GradNorm(weights) => {
                let (mut tape, gn, ws) = seg.tape(g)?;
                let x = tape.constant(seg.batch.x.clone());
                let out = forward_tape(seg.arch, &mut tape, &ws, x)?;
                let l = loss_tape(seg.arch.loss, &mut tape, out, &seg.batch.y)?;
                let (_, mut grads) =
                    tape.gradient_of_weighted_grad_norm(l, &ws, *weights, &[gn])?;
                Ok(grads.remove(0))
            }
            Evaluator::Sharpness { radii, dirs } => {
                // chain rule through the action: ∇_g φ = J_gᵀ mean ∇_w L(g·w + t d)
                let (p, _) = seg.apply(g)?;
                let shapes = p.shapes();
                let flat = p.flatten();
                let mut acc: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
                let mut point = vec![0.0; flat.len()];
                for &t in radii.iter() {
                    for d in dirs.iter() {
                        for ((q, x), y) in point.iter_mut().zip(&flat).zip(d) {
                            *q = x + t * y;
                        }
                        let (_, gr) = loss_and_grad(
                            seg.arch,
                            &MlpParams::from_flat(&point, &shapes),
                            seg.batch,
                        )?;
                        for (a, b) in acc.iter_mut().zip(&gr) {
                            a.axpy(1.0, b)?;
                        }
                    }
                }
                let scale = 1.0 / (radii.len() * dirs.len()) as f64;
                let (mut tape, gn, ws) = seg.tape(g)?;
                let u = seg.pair;
                let mut total = None;
                for i in [u - 1, u] {
                    let c = tape.constant(acc[i].scale(scale));
                    let prod = tape.mul(ws[i], c)?;
                    let s = tape.sum(prod)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, s)?,
                        None => s,
                    });
                }
                let total = total.expect("a pair has two blocks");
                Ok(tape.gradient(total, &[gn])?.remove(0))
            }
            Evaluator::Curvature(_) => {
                let d = g.rows();
                let fd = fd_gradient(
                    |flat| {
                        let gm = Mat::new(d, d, flat.to_vec())?;
                        self.value(seg, &gm)
                    },
                    g.as_slice(),
                    None,
                )?;
                Mat::new(d, d, fd)
            }
        }
    }
}

fn run<R: Rng + ?Sized>(
    arch: &MlpArch,
    params: &MlpParams,
    batches: &[Batch],
    cfg: &TeleportConfig,
    weights: Option<&[Mat]>,
    rng: &mut R,
) -> Result<(MlpParams, TeleportReport)> {
    cfg.validate()?;
    arch.check_params(params)?;
    if batches.is_empty() {
        return Err(Error::InvalidConfig(
            "teleport needs at least one batch".into(),
        ));
    }
    let pairs = if cfg.pairs.is_empty() {
        arch.pairs()
    } else {
        cfg.pairs.clone()
    };
    if let Some(&bad) = pairs.iter().find(|&&u| u == 0 || u >= arch.layers()) {
        return Err(Error::InvalidConfig(format!(
            "layer pair {bad} invalid for {} layers",
            arch.layers()
        )));
    }
    let dirs = match &cfg.objective {
        Objective::Sharpness { directions, .. } => {
            unit_directions(arch.param_count(), *directions, rng)
        }
        _ => Vec::new(),
    };
    let (loss_before, grad_norm_before) = batch_stats(arch, params, batches)?;

    let mut current = params.clone();
    let mut segments = Vec::new();
    let mut actions = Vec::new();
    let mut flags = Vec::new();
    let mut drift: f64 = 0.0;
    for (bi, batch) in batches.iter().enumerate() {
        for &u in &pairs {
            let eval = match &cfg.objective {
                Objective::GradNorm | Objective::MahalanobisGradNorm => {
                    Evaluator::GradNorm(weights)
                }
                Objective::Sharpness { radii, .. } => Evaluator::Sharpness { radii, dirs: &dirs },
                Objective::Curvature { k, .. } => {
                    Evaluator::Curvature(sample_lie_on(arch, u, *k, rng))
                }
            };
            let seg = Segment {
                arch,
                params: &current,
                fwd: mlp_forward(arch, &current, &batch.x)?,
                batch,
                pair: u,
                kind: cfg.action,
            };
            let l0 = loss(arch, &current, batch)?;
            let exact = seg.exact_regime();
            let keeps_loss = |g: &Mat| -> bool {
                if !exact {
                    return true;
                }
                seg.apply(g)
                    .and_then(|(p, _)| loss(arch, &p, batch))
                    .is_ok_and(|l| (l - l0).abs() <= DRIFT_GUARD * l0.abs().max(1.0))
            };
            let identity = Mat::identity(arch.dims[u]);
            let outcome = ascend(
                &identity,
                cfg.lr,
                cfg.steps,
                cfg.objective.sign(),
                |g| {
                    !GroupElement::new(u, g.clone()).map_or(true, |e| e.is_degenerate())
                        && keeps_loss(g)
                },
                |g| eval.value(&seg, g),
                |g| eval.gradient(&seg, g),
            )
            .and_then(|a| {
                let (p, rec) = seg.apply(&a.g)?;
                let l1 = loss(arch, &p, batch)?;
                if !l1.is_finite() {
                    return Err(Error::NonFinite(format!("loss after teleport is {l1}")));
                }
                Ok((a, p, rec, l1))
            });
            match outcome {
                Ok((a, p, rec, l1)) => {
                    drift = drift.max((l1 - l0).abs());
                    segments.push(SegmentReport {
                        batch: bi,
                        pair: u,
                        objective_before: a.start,
                        objective_after: a.end(),
                        trajectory: a.trajectory,
                        loss_before: l0,
                        loss_after: l1,
                        halvings: a.halvings,
                        reverts: a.reverts,
                        aborted: None,
                    });
                    actions.push(rec);
                    current = p;
                }
                Err(e) => {
                    let reason = match (&e, &cfg.objective) {
                        (Error::Degenerate(_), Objective::Curvature { .. }) => {
                            format!("all curvature samples degenerate: {e}")
                        }
                        _ => e.to_string(),
                    };
                    log::warn!("teleport batch {bi} pair {u} aborted: {reason}");
                    flags.push(format!("batch {bi} pair {u}: {reason}"));
                    segments.push(SegmentReport {
                        batch: bi,
                        pair: u,
                        trajectory: Vec::new(),
                        objective_before: f64::NAN,
                        objective_after: f64::NAN,
                        loss_before: l0,
                        loss_after: l0,
                        halvings: 0,
                        reverts: 0,
                        aborted: Some(reason),
                    });
                }
            }
        }
    }
    let (loss_after, grad_norm_after) = batch_stats(arch, &current, batches)?;
    let report = TeleportReport {
        objective: cfg.objective.name().to_string(),
        grad_norm_before,
        grad_norm_after,
        loss_before,
        loss_after,
        drift,
        segments,
        flags,
        actions,
    };
    Ok((current, report))
}

fn sample_lie_on<R: Rng + ?Sized>(
    arch: &MlpArch,
    pair: usize,
    k: usize,
    rng: &mut R,
) -> Vec<LieCoordinate> {
    (0..k)
        .map(|_| LieCoordinate::sample(pair, arch.dims[pair], rng))
        .collect()
}
