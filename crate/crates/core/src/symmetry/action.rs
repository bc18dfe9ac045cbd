use crate::autodiff::NodeId;
use crate::error::{Error, Result};
use crate::linalg::{inverse, pseudoinverse_apply};
use crate::models::{mlp_forward, Forward, MlpArch, MlpParams};
use crate::symmetry::{ActionKind, GroupElement};
use crate::{Mat, Tape64};

/// The linear maps an action applied to the pair, kept for momentum transport.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedAction {
    pub pair: usize,
    pub kind: ActionKind,
    pub g: Mat,
    /// Right multiplier applied to `weights[pair]`.
    pub upper: Mat,
    /// Left multiplier applied to `weights[pair − 1]`; `None` when that block changed nonlinearly.
    pub lower: Option<Mat>,
}

fn check_pair(arch: &MlpArch, params: &MlpParams, elem: &GroupElement) -> Result<()> {
    arch.check_params(params)?;
    let u = elem.pair;
    if u == 0 || u >= arch.layers() {
        return Err(Error::InvalidConfig(format!(
            "layer pair {u} invalid for {} layers (valid: 1..{})",
            arch.layers(),
            arch.layers() - 1
        )));
    }
    let d = arch.dims[u];
    if elem.g.shape() != (d, d) {
        return Err(Error::ShapeMismatch {
            op: "group-action",
            lhs: elem.g.shape(),
            rhs: (d, d),
        });
    }
    Ok(())
}

/// Action 1: `W_u ↦ W_u g⁻¹`, `W_{u−1} ↦ σ⁻¹(g σ(W_{u−1} h)) h⁺`.
pub fn act_v1(
    arch: &MlpArch,
    elem: &GroupElement,
    params: &MlpParams,
    x: &Mat,
) -> Result<MlpParams> {
    let fwd = mlp_forward(arch, params, x)?;
    act_v1_with(arch, elem, params, &fwd).map(|(p, _)| p)
}

pub(crate) fn act_v1_with(
    arch: &MlpArch,
    elem: &GroupElement,
    params: &MlpParams,
    fwd: &Forward,
) -> Result<(MlpParams, AppliedAction)> {
    check_pair(arch, params, elem)?;
    if arch.slope <= 0.0 {
        return Err(Error::Domain(
            "action 1 needs an invertible activation (slope > 0)".into(),
        ));
    }
    let u = elem.pair;
    let ginv =
        inverse(&elem.g).map_err(|_| Error::Degenerate("group element is singular".into()))?;
    if elem.is_identity() {
        return Ok((params.clone(), identity_record(elem, ActionKind::V1)));
    }
    let h = &fwd.acts[u - 1];
    let s = fwd.pre[u - 1].map(|v| arch.sigma(v));
    let target = elem.g.matmul(&s)?.map(|v| arch.sigma_inv(v));
    let mut out = params.clone();
    out.weights[u] = params.weights[u].matmul(&ginv)?;
    out.weights[u - 1] = pseudoinverse_apply(h, &target)?;
    let record = AppliedAction {
        pair: u,
        kind: ActionKind::V1,
        g: elem.g.clone(),
        upper: ginv,
        lower: None,
    };
    Ok((out, record))
}

/// Action 2: `W_{u−1} ↦ g W_{u−1}`, `W_u ↦ W_u σ(W_{u−1}h) σ(g W_{u−1} h)⁺`.
///
/// The upper block is computed as `W_u (I + (S − S_g) S_g⁺)` with `S = σ(W_{u−1}h)` and
/// `S_g = σ(g W_{u−1} h)`. This equals the map above whenever `S_g S_g⁺ = I`, and otherwise keeps
/// the component of `W_u` outside the column space of `S_g`, so the action is continuous at `g = I`.
pub fn act_v2(
    arch: &MlpArch,
    elem: &GroupElement,
    params: &MlpParams,
    x: &Mat,
) -> Result<MlpParams> {
    let fwd = mlp_forward(arch, params, x)?;
    act_v2_with(arch, elem, params, &fwd).map(|(p, _)| p)
}

pub(crate) fn act_v2_with(
    arch: &MlpArch,
    elem: &GroupElement,
    params: &MlpParams,
    fwd: &Forward,
) -> Result<(MlpParams, AppliedAction)> {
    check_pair(arch, params, elem)?;
    if elem.is_identity() {
        return Ok((params.clone(), identity_record(elem, ActionKind::V2)));
    }
    let u = elem.pair;
    let pre = &fwd.pre[u - 1];
    let s = pre.map(|v| arch.sigma(v));
    let sg = elem.g.matmul(pre)?.map(|v| arch.sigma(v));
    let right = pseudoinverse_apply(&sg, &s.sub(&sg)?)?.add(&Mat::identity(s.rows()))?;
    let mut out = params.clone();
    out.weights[u - 1] = elem.g.matmul(&params.weights[u - 1])?;
    out.weights[u] = params.weights[u].matmul(&right)?;
    let record = AppliedAction {
        pair: u,
        kind: ActionKind::V2,
        g: elem.g.clone(),
        upper: right,
        lower: Some(elem.g.clone()),
    };
    Ok((out, record))
}

fn identity_record(elem: &GroupElement, kind: ActionKind) -> AppliedAction {
    let d = elem.g.rows();
    AppliedAction {
        pair: elem.pair,
        kind,
        g: elem.g.clone(),
        upper: Mat::identity(d),
        lower: Some(Mat::identity(d)),
    }
}

/// Applies either action, using the activations of `params` on the batch inputs `x`.
pub fn apply_action(
    kind: ActionKind,
    arch: &MlpArch,
    elem: &GroupElement,
    params: &MlpParams,
    x: &Mat,
) -> Result<(MlpParams, AppliedAction)> {
    let fwd = mlp_forward(arch, params, x)?;
    match kind {
        ActionKind::V1 => act_v1_with(arch, elem, params, &fwd),
        ActionKind::V2 => act_v2_with(arch, elem, params, &fwd),
    }
}

/// Records the transformed weights on a tape as functions of the group-element node `g`.
///
/// Weights outside the pair become fresh variable leaves, so every returned node can serve
/// as an inner root when differentiating the gradient norm.
pub fn act_tape(
    kind: ActionKind,
    arch: &MlpArch,
    tape: &mut Tape64,
    g: NodeId,
    pair: usize,
    params: &MlpParams,
    fwd: &Forward,
) -> Result<Vec<NodeId>> {
    let u = pair;
    if u == 0 || u >= params.weights.len() {
        return Err(Error::InvalidConfig(format!("layer pair {u} out of range")));
    }
    let mut nodes = Vec::with_capacity(params.weights.len());
    for (i, w) in params.weights.iter().enumerate() {
        if i != u && i != u - 1 {
            nodes.push(tape.variable(w.clone()));
            continue;
        }
        // placeholder, replaced below once both blocks exist
        nodes.push(g);
    }
    let pre = &fwd.pre[u - 1];
    let s = pre.map(|v| arch.sigma(v));
    match kind {
        ActionKind::V2 => {
            let lower_w = tape.constant(params.weights[u - 1].clone());
            nodes[u - 1] = tape.matmul(g, lower_w)?;
            let pre_c = tape.constant(pre.clone());
            let gpre = tape.matmul(g, pre_c)?;
            let sg = tape.leaky_relu(gpre, arch.slope)?;
            let s_c = tape.constant(s);
            let gap = tape.sub(s_c, sg)?;
            let solved = tape.pseudo_solve(sg, gap)?;
            let eye = tape.constant(Mat::identity(pre.rows()));
            let right = tape.add(solved, eye)?;
            let upper_w = tape.constant(params.weights[u].clone());
            nodes[u] = tape.matmul(upper_w, right)?;
        }
        ActionKind::V1 => {
            if arch.slope <= 0.0 {
                return Err(Error::Domain(
                    "action 1 needs an invertible activation (slope > 0)".into(),
                ));
            }
            let ginv = tape.inverse(g)?;
            let upper_w = tape.constant(params.weights[u].clone());
            nodes[u] = tape.matmul(upper_w, ginv)?;
            let s_c = tape.constant(s);
            let gs = tape.matmul(g, s_c)?;
            let inv = tape.leaky_relu(gs, 1.0 / arch.slope)?;
            let h = &fwd.acts[u - 1];
            let hpinv = pseudoinverse_apply(h, &Mat::identity(h.cols()))?;
            let hp = tape.constant(hpinv);
            nodes[u - 1] = tape.matmul(inv, hp)?;
        }
    }
    Ok(nodes)
}
