use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, inverse, pseudoinverse_apply};
use crate::models::{mlp_forward, Batch, MlpArch, MlpParams};
use crate::symmetry::LieCoordinate;
use crate::Mat;

const KINK_TOL: f64 = 1e-6;

/// Elementwise bijection σ with the derivatives of σ⁻¹ needed for third-order jets.
pub trait InvertibleActivation {
    fn apply(&self, x: f64) -> f64;
    fn inverse(&self, y: f64) -> f64;
    /// The j-th derivative of σ⁻¹ at `y`, for j = 1, 2, 3.
    fn inverse_derivative(&self, j: usize, y: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakyRelu {
    pub slope: f64,
}

impl InvertibleActivation for LeakyRelu {
    fn apply(&self, x: f64) -> f64 {
        if x >= 0.0 {
            x
        } else {
            self.slope * x
        }
    }

    fn inverse(&self, y: f64) -> f64 {
        if y >= 0.0 {
            y
        } else {
            y / self.slope
        }
    }

    fn inverse_derivative(&self, j: usize, y: f64) -> f64 {
        match j {
            1 if y >= 0.0 => 1.0,
            1 => 1.0 / self.slope,
            _ => 0.0,
        }
    }
}

/// σ = sinh, a smooth bijection whose inverse has non-vanishing higher derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sinh;

impl InvertibleActivation for Sinh {
    fn apply(&self, x: f64) -> f64 {
        x.sinh()
    }

    fn inverse(&self, y: f64) -> f64 {
        y.asinh()
    }

    fn inverse_derivative(&self, j: usize, y: f64) -> f64 {
        let q = 1.0 + y * y;
        match j {
            1 => 1.0 / q.sqrt(),
            2 => -y / q.powf(1.5),
            3 => (2.0 * y * y - 1.0) / q.powf(2.5),
            _ => 0.0,
        }
    }
}

/// γ(0) and its first three derivatives, flattened as vec(U) ‖ vec(V).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveJet {
    pub j0: Vec<f64>,
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
    pub j3: Vec<f64>,
}

impl CurveJet {
    pub fn new(j0: Vec<f64>, j1: Vec<f64>, j2: Vec<f64>, j3: Vec<f64>) -> Result<Self> {
        let n = j0.len();
        if j1.len() != n || j2.len() != n || j3.len() != n {
            return Err(Error::BadLength {
                rows: n,
                cols: 1,
                len: j1.len().min(j2.len()).min(j3.len()),
            });
        }
        Ok(Self { j0, j1, j2, j3 })
    }

    /// Jet of the curve evaluated at −t (odd derivatives flip sign).
    pub fn reversed(&self) -> Self {
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect();
        Self {
            j0: self.j0.clone(),
            j1: neg(&self.j1),
            j2: self.j2.clone(),
            j3: neg(&self.j3),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|x| c * x).collect();
        Self {
            j0: s(&self.j0),
            j1: s(&self.j1),
            j2: s(&self.j2),
            j3: s(&self.j3),
        }
    }
}

/// Which terms of the σ⁻¹ expansion to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetTerms {
    /// All terms through third order.
    Full,
    /// Only the 1/σ′ terms, exact when σ⁻¹ is piecewise linear.
    FirstOrderInverse,
}

/// Two-layer action 1 on `U σ(V X)`: returns `(U g⁻¹, σ⁻¹(g σ(VX)) X⁺)`.
pub fn two_layer_action<A: InvertibleActivation>(
    act: &A,
    u: &Mat,
    v: &Mat,
    x: &Mat,
    g: &Mat,
) -> Result<(Mat, Mat)> {
    let ginv = inverse(g).map_err(|_| Error::Degenerate("group element is singular".into()))?;
    let s = v.matmul(x)?.map(|z| act.apply(z));
    let target = g.matmul(&s)?.map(|y| act.inverse(y));
    Ok((u.matmul(&ginv)?, pseudoinverse_apply(x, &target)?))
}

/// Jet at t = 0 of `t ↦ exp(tM)·(U, V)` under the two-layer action 1.
///
/// The second element of the result is true when some preactivation lies within 1e-6 of 0.
pub fn two_layer_jet<A: InvertibleActivation>(
    act: &A,
    u: &Mat,
    v: &Mat,
    x: &Mat,
    m: &Mat,
    terms: JetTerms,
) -> Result<(CurveJet, bool)> {
    let vx = v.matmul(x)?;
    let near_kink = vx.as_slice().iter().any(|z| z.abs() < KINK_TOL);
    let s = vx.map(|z| act.apply(z));
    let s1 = s.map(|y| act.inverse_derivative(1, y));
    let (s2, s3) = match terms {
        JetTerms::Full => (
            s.map(|y| act.inverse_derivative(2, y)),
            s.map(|y| act.inverse_derivative(3, y)),
        ),
        JetTerms::FirstOrderInverse => {
            let z = Mat::zeros(s.rows(), s.cols());
            (z.clone(), z)
        }
    };
    let p1 = m.matmul(&s)?;
    let p2 = m.matmul(&p1)?;
    let p3 = m.matmul(&p2)?;
    let um = u.matmul(m)?;
    let um2 = um.matmul(m)?;
    let um3 = um2.matmul(m)?;

    let v1 = p1.hadamard(&s1)?;
    let p1sq = p1.hadamard(&p1)?;
    let v2 = p2.hadamard(&s1)?.add(&p1sq.hadamard(&s2)?)?;
    let v3 = p3
        .hadamard(&s1)?
        .add(&p1.hadamard(&p2)?.hadamard(&s2)?.scale(3.0))?
        .add(&p1sq.hadamard(&p1)?.hadamard(&s3)?)?;

    let xp = |b: &Mat| pseudoinverse_apply(x, b);
    let v0 = xp(&vx.map(|z| act.inverse(act.apply(z))))?;
    let cat = |a: &Mat, b: &Mat| {
        let mut out = a.as_slice().to_vec();
        out.extend_from_slice(b.as_slice());
        out
    };
    let jet = CurveJet::new(
        cat(u, &v0),
        cat(&um.scale(-1.0), &xp(&v1)?),
        cat(&um2, &xp(&v2)?),
        cat(&um3.scale(-1.0), &xp(&v3)?),
    )?;
    Ok((jet, near_kink))
}

/// Jet of the symmetry curve `exp(tM)·w` on the pair `lie.pair` of an MLP (action 1).
pub fn curve_jet(
    lie: &LieCoordinate,
    arch: &MlpArch,
    params: &MlpParams,
    batch: &Batch,
) -> Result<(CurveJet, bool)> {
    if arch.slope <= 0.0 {
        return Err(Error::Domain(
            "curve jets need an invertible activation".into(),
        ));
    }
    let u = lie.pair;
    if u == 0 || u >= arch.layers() {
        return Err(Error::InvalidConfig(format!("layer pair {u} out of range")));
    }
    let fwd = mlp_forward(arch, params, &batch.x)?;
    two_layer_jet(
        &LeakyRelu { slope: arch.slope },
        &params.weights[u],
        &params.weights[u - 1],
        &fwd.acts[u - 1],
        &lie.m,
        JetTerms::FirstOrderInverse,
    )
}

/// Flattened (U, V) of `exp(tM)·w` under the two-layer action 1; the curve behind [`two_layer_jet`].
pub fn two_layer_curve_point<A: InvertibleActivation>(
    act: &A,
    u: &Mat,
    v: &Mat,
    x: &Mat,
    m: &Mat,
    t: f64,
) -> Result<Vec<f64>> {
    let g = expm(&m.scale(t))?;
    let (a, b) = two_layer_action(act, u, v, x, &g)?;
    let mut out = a.into_vec();
    out.extend(b.into_vec());
    Ok(out)
}
