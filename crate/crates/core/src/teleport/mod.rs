//! Teleportation: gradient ascent or descent on group elements, then applying the action.

mod mlp;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::protocol_radii;
use crate::symmetry::{ActionKind, AppliedAction};
use crate::Mat;

pub use mlp::{teleport, teleport_curvature, teleport_mahalanobis, teleport_sharpness};
pub use synthetic::{
    teleport_orbit, CircleOrbit, OrbitModel, OrbitReport, RotationEllipse, TwoBasin,
};

/// Maximum number of times a step's learning rate is halved before the step is rejected.
pub const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    #[default]
    Increase,
    Decrease,
}

impl Sign {
    fn improves(self, candidate: f64, current: f64) -> bool {
        match self {
            Sign::Increase => candidate > current,
            Sign::Decrease => candidate < current,
        }
    }

    fn factor(self) -> f64 {
        match self {
            Sign::Increase => 1.0,
            Sign::Decrease => -1.0,
        }
    }
}

/// What a teleport optimizes over the group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    /// Maximize ½‖∇L(g·w)‖².
    GradNorm,
    /// Maximize ½∇Lᵀ A ∇L for a caller-supplied diagonal A.
    MahalanobisGradNorm,
    /// Move φ(g·w, T, D) in the direction of `sign`, with D drawn once per call.
    Sharpness {
        #[serde(default = "protocol_radii")]
        radii: Vec<f64>,
        #[serde(default = "default_directions")]
        directions: usize,
        #[serde(default)]
        sign: Sign,
    },
    /// Move ψ(g·w, k) in the direction of `sign`, with the k curves frozen during the ascent.
    Curvature {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        sign: Sign,
    },
}

fn default_directions() -> usize {
    200
}

fn default_k() -> usize {
    1
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::GradNorm => "grad-norm",
            Objective::MahalanobisGradNorm => "mahalanobis-grad-norm",
            Objective::Sharpness { .. } => "sharpness",
            Objective::Curvature { .. } => "curvature",
        }
    }

    pub fn sign(&self) -> Sign {
        match self {
            Objective::Sharpness { sign, .. } | Objective::Curvature { sign, .. } => *sign,
            _ => Sign::Increase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleportConfig {
    pub objective: Objective,
    pub lr: f64,
    pub steps: usize,
    /// Layer pairs to teleport, in order; empty means every pair in ascending order.
    pub pairs: Vec<usize>,
    /// Number of minibatches a trainer draws for one teleport.
    pub batches: usize,
    pub batch_size: usize,
    pub action: ActionKind,
}

impl Default for TeleportConfig {
    fn default() -> Self {
        Self {
            objective: Objective::GradNorm,
            lr: 5e-2,
            steps: 10,
            pairs: Vec::new(),
            batches: 8,
            batch_size: 200,
            action: ActionKind::V2,
        }
    }
}

impl TeleportConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "teleport lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("teleport steps must be >= 1".into()));
        }
        if self.batches == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "teleport needs at least one non-empty batch".into(),
            ));
        }
        match &self.objective {
            Objective::Sharpness {
                radii, directions, ..
            } => {
                if *directions == 0 {
                    return Err(Error::InvalidConfig(
                        "sharpness objective needs |D| >= 1".into(),
                    ));
                }
                if radii.is_empty() || radii.iter().any(|t| !t.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "sharpness objective needs finite radii".into(),
                    ));
                }
            }
            Objective::Curvature { k, .. } if *k == 0 => {
                return Err(Error::InvalidConfig(
                    "curvature objective needs k >= 1".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Outcome of one (batch, layer pair) ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub batch: usize,
    pub pair: usize,
    /// Objective after each step; a rejected step repeats the previous value.
    pub trajectory: Vec<f64>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub halvings: usize,
    pub reverts: usize,
    /// Set when the segment was abandoned and the parameters left as they were.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleportReport {
    pub objective: String,
    /// Mean over the teleport batches of ‖∇L‖ before and after.
    pub grad_norm_before: f64,
    pub grad_norm_after: f64,
    /// Mean over the teleport batches of the loss before and after.
    pub loss_before: f64,
    pub loss_after: f64,
    /// Largest per-segment |Δloss| on the segment's own batch.
    pub drift: f64,
    pub segments: Vec<SegmentReport>,
    pub flags: Vec<String>,
    /// The linear maps applied, in order, for momentum transport.
    #[serde(skip)]
    pub actions: Vec<AppliedAction>,
}

impl TeleportReport {
    pub fn any_aborted(&self) -> bool {
        self.segments.iter().any(|s| s.aborted.is_some())
    }
}

/// Result of a guarded fixed-rate ascent on a group coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Ascent {
    pub g: Mat,
    pub start: f64,
    pub trajectory: Vec<f64>,
    pub halvings: usize,
    pub reverts: usize,
}

impl Ascent {
    pub fn end(&self) -> f64 {
        self.trajectory.last().copied().unwrap_or(self.start)
    }
}

/// Runs `steps` steps of `g ← g ± lr·∇objective` from `g0`.
///
/// A step whose candidate fails to improve the objective is retried at half the rate, up to
/// [`MAX_HALVINGS`] times, after which it is rejected. Candidates for which `valid` is false
/// (a degenerate group element) or whose evaluation fails count as reverts and are halved too.
pub fn ascend<V, G, C>(
    g0: &Mat,
    lr: f64,
    steps: usize,
    sign: Sign,
    valid: C,
    mut value: V,
    mut grad: G,
) -> Result<Ascent>
where
    V: FnMut(&Mat) -> Result<f64>,
    G: FnMut(&Mat) -> Result<Mat>,
    C: Fn(&Mat) -> bool,
{
    let start = value(g0)?;
    if !start.is_finite() {
        return Err(Error::NonFinite(format!(
            "teleport objective at the initial element is {start}"
        )));
    }
    let mut g = g0.clone();
    let mut current = start;
    let mut out = Ascent {
        g: g0.clone(),
        start,
        trajectory: Vec::with_capacity(steps),
        halvings: 0,
        reverts: 0,
    };
    for _ in 0..steps {
        let d = grad(&g)?;
        if !d.all_finite() {
            return Err(Error::NonFinite("teleport objective gradient".into()));
        }
        let mut rate = lr * sign.factor();
        for attempt in 0..=MAX_HALVINGS {
            if attempt > 0 {
                rate *= 0.5;
                out.halvings += 1;
            }
            let mut cand = g.clone();
            cand.axpy(rate, &d)?;
            if !valid(&cand) {
                out.reverts += 1;
                continue;
            }
            match value(&cand) {
                Ok(v) if v.is_finite() && sign.improves(v, current) => {
                    g = cand;
                    current = v;
                    break;
                }
                Ok(_) => {}
                Err(Error::Degenerate(_)) | Err(Error::Singular) => out.reverts += 1,
                Err(e) => return Err(e),
            }
        }
        out.trajectory.push(current);
    }
    out.g = g;
    Ok(out)
}
