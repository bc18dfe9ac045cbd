//! GL group actions on consecutive layer pairs, symmetry curves and their curvature.

mod action;
mod curvature;
mod jet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::condition_estimate;
use crate::Mat;

pub use action::{act_tape, act_v1, act_v2, apply_action, AppliedAction};
pub(crate) use action::{act_v1_with, act_v2_with};
pub use curvature::{curvature, curvature_derivative, psi, psi_with, sample_lie};
pub use jet::{
    curve_jet, two_layer_action, two_layer_curve_point, two_layer_jet, CurveJet,
    InvertibleActivation, JetTerms, LeakyRelu, Sinh,
};

/// Condition number above which a group element counts as degenerate.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    /// `W_u g⁻¹` and `σ⁻¹(g σ(W_{u−1}h)) h⁺`; needs an invertible activation.
    V1,
    /// `g W_{u−1}` and `W_u σ(W_{u−1}h) σ(g W_{u−1}h)⁺`.
    #[default]
    V2,
}

/// An element g ∈ GL(d_u) acting on the pair (weights[u], weights[u−1]).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub pair: usize,
    pub g: Mat,
}

impl GroupElement {
    pub fn new(pair: usize, g: Mat) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::ShapeMismatch {
                op: "group-element",
                lhs: g.shape(),
                rhs: (g.rows(), g.rows()),
            });
        }
        Ok(Self { pair, g })
    }

    pub fn identity(pair: usize, dim: usize) -> Self {
        Self {
            pair,
            g: Mat::identity(dim),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.g == Mat::identity(self.g.rows())
    }

    /// Frobenius condition estimate; infinite when singular.
    pub fn condition(&self) -> f64 {
        condition_estimate(&self.g)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.condition() <= MAX_CONDITION)
    }
}

/// A Lie-algebra direction M on a layer pair, generating the curve `exp(tM)·w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieCoordinate {
    pub pair: usize,
    pub m: Mat,
}

impl LieCoordinate {
    /// Entries i.i.d. standard normal scaled by 1/d.
    pub fn sample<R: Rng + ?Sized>(pair: usize, dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / dim as f64;
        let m = Mat::from_fn(dim, dim, |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        Self { pair, m }
    }
}
