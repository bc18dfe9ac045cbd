use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{column_softmax, cross_entropy_value, leaky, NodeId};
use crate::error::{Error, Result};
use crate::models::{Batch, Targets};
use crate::{Mat, Tape64};

pub const DEFAULT_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Frobenius norm of the residual, ‖Y − f(X)‖.
    #[default]
    Mse,
    /// Squared Frobenius norm of the residual.
    MseSquared,
    /// Mean softmax cross-entropy over the batch columns.
    CrossEntropy,
}

/// Layer widths d₀…d_L of a bias-free LeakyReLU MLP whose last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub dims: Vec<usize>,
    pub slope: f64,
    pub loss: LossKind,
}

impl MlpArch {
    pub fn new(dims: Vec<usize>, loss: LossKind) -> Result<Self> {
        Self::with_slope(dims, DEFAULT_SLOPE, loss)
    }

    pub fn with_slope(dims: Vec<usize>, slope: f64, loss: LossKind) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "an MLP needs at least 2 layers (3 widths), got widths {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "zero layer width in {dims:?}"
            )));
        }
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::InvalidConfig(format!(
                "activation slope {slope} outside [0, 1)"
            )));
        }
        Ok(Self { dims, slope, loss })
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Shapes of the weight matrices, `weights[i]` being `dims[i+1] × dims[i]`.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }

    /// Valid group-action pair indices `u`: the pair (weights[u], weights[u−1]) with
    /// g acting on the hidden width `dims[u]`.
    pub fn pairs(&self) -> Vec<usize> {
        (1..self.layers()).collect()
    }

    pub fn sigma(&self, x: f64) -> f64 {
        leaky(x, self.slope)
    }

    pub fn sigma_prime(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0
        } else {
            self.slope
        }
    }

    /// Inverse activation; requires a positive slope.
    pub fn sigma_inv(&self, y: f64) -> f64 {
        if y >= 0.0 {
            y
        } else {
            y / self.slope
        }
    }

    pub fn check_params(&self, params: &MlpParams) -> Result<()> {
        let shapes = self.shapes();
        if params.weights.len() != shapes.len() {
            return Err(Error::InvalidConfig(format!(
                "{} weight matrices for a {}-layer network",
                params.weights.len(),
                shapes.len()
            )));
        }
        for (w, &s) in params.weights.iter().zip(&shapes) {
            if w.shape() != s {
                return Err(Error::ShapeMismatch {
                    op: "mlp-params",
                    lhs: w.shape(),
                    rhs: s,
                });
            }
        }
        Ok(())
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Entries uniform on [0, 1].
    #[default]
    Uniform01,
    /// Entries uniform on ±1/√fan_in.
    FanIn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Mat>,
}

impl MlpParams {
    pub fn new(weights: Vec<Mat>) -> Self {
        Self { weights }
    }

    pub fn init<R: Rng + ?Sized>(arch: &MlpArch, init: Init, rng: &mut R) -> Self {
        let weights = arch
            .shapes()
            .into_iter()
            .map(|(r, c)| {
                let (lo, hi) = match init {
                    Init::Uniform01 => (0.0, 1.0),
                    Init::FanIn => {
                        let b = 1.0 / (c as f64).sqrt();
                        (-b, b)
                    }
                };
                Mat::from_fn(r, c, |_, _| rng.random_range(lo..hi))
            })
            .collect();
        Self { weights }
    }

    pub fn flatten(&self) -> Vec<f64> {
        crate::linalg::flatten(&self.weights)
    }

    pub fn from_flat(flat: &[f64], shapes: &[(usize, usize)]) -> Self {
        Self::new(crate::linalg::unflatten(flat, shapes))
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.weights.iter().map(|w| w.shape()).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.frobenius_norm_sq()).sum()
    }
}

/// Activations retained by a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `acts[0] = X`, `acts[i+1] = σ(pre[i])` for hidden layers.
    pub acts: Vec<Mat>,
    /// `pre[i] = weights[i]·acts[i]`; the last entry is the network output.
    pub pre: Vec<Mat>,
}

impl Forward {
    pub fn output(&self) -> &Mat {
        self.pre
            .last()
            .expect("forward pass has at least one layer")
    }
}

pub fn mlp_forward(arch: &MlpArch, params: &MlpParams, x: &Mat) -> Result<Forward> {
    arch.check_params(params)?;
    let l = params.weights.len();
    let mut acts = Vec::with_capacity(l);
    let mut pre = Vec::with_capacity(l);
    acts.push(x.clone());
    for (i, w) in params.weights.iter().enumerate() {
        let z = w.matmul(&acts[i])?;
        if i + 1 < l {
            acts.push(z.map(|v| arch.sigma(v)));
        }
        pre.push(z);
    }
    Ok(Forward { acts, pre })
}

pub fn mse_loss(pred: &Mat, y: &Mat) -> Result<f64> {
    Ok(pred.sub(y)?.frobenius_norm())
}

pub fn cross_entropy_loss(pred: &Mat, labels: &[usize]) -> Result<f64> {
    if labels.len() != pred.cols() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_loss",
            lhs: pred.shape(),
            rhs: (1, labels.len()),
        });
    }
    cross_entropy_value(pred, labels)
}

pub fn output_loss(kind: LossKind, pred: &Mat, targets: &Targets) -> Result<f64> {
    match (kind, targets) {
        (LossKind::Mse, Targets::Regression(y)) => mse_loss(pred, y),
        (LossKind::MseSquared, Targets::Regression(y)) => Ok(pred.sub(y)?.frobenius_norm_sq()),
        (LossKind::CrossEntropy, Targets::Labels(l)) => cross_entropy_loss(pred, l),
        (k, _) => Err(Error::InvalidConfig(format!(
            "loss {k:?} does not match the target kind"
        ))),
    }
}

pub fn loss(arch: &MlpArch, params: &MlpParams, batch: &Batch) -> Result<f64> {
    let f = mlp_forward(arch, params, &batch.x)?;
    output_loss(arch.loss, f.output(), &batch.y)
}

/// Loss and its gradient with respect to every weight matrix, by hand-written backprop.
pub fn loss_and_grad(arch: &MlpArch, params: &MlpParams, batch: &Batch) -> Result<(f64, Vec<Mat>)> {
    let f = mlp_forward(arch, params, &batch.x)?;
    let out = f.output();
    let (value, mut delta) = match (arch.loss, &batch.y) {
        (LossKind::Mse, Targets::Regression(y)) => {
            let r = out.sub(y)?;
            let n = r.frobenius_norm();
            let d = if n > 0.0 {
                r.scale(1.0 / n)
            } else {
                Mat::zeros(r.rows(), r.cols())
            };
            (n, d)
        }
        (LossKind::MseSquared, Targets::Regression(y)) => {
            let r = out.sub(y)?;
            (r.frobenius_norm_sq(), r.scale(2.0))
        }
        (LossKind::CrossEntropy, Targets::Labels(labels)) => {
            let v = cross_entropy_loss(out, labels)?;
            let mut d = column_softmax(out);
            let k = labels.len() as f64;
            for (j, &l) in labels.iter().enumerate() {
                d[(l, j)] -= 1.0;
            }
            (v, d.scale(1.0 / k))
        }
        (k, _) => {
            return Err(Error::InvalidConfig(format!(
                "loss {k:?} does not match the target kind"
            )))
        }
    };
    let l = params.weights.len();
    let mut grads = vec![Mat::zeros(1, 1); l];
    for i in (0..l).rev() {
        grads[i] = delta.matmul_t(&f.acts[i])?;
        if i > 0 {
            let back = params.weights[i].t_matmul(&delta)?;
            let mask = f.pre[i - 1].map(|v| arch.sigma_prime(v));
            delta = back.hadamard(&mask)?;
        }
    }
    Ok((value, grads))
}

/// Records the forward pass on a tape; returns the output node.
pub fn forward_tape(
    arch: &MlpArch,
    tape: &mut Tape64,
    weights: &[NodeId],
    x: NodeId,
) -> Result<NodeId> {
    let mut h = x;
    for (i, &w) in weights.iter().enumerate() {
        let z = tape.matmul(w, h)?;
        h = if i + 1 < weights.len() {
            tape.leaky_relu(z, arch.slope)?
        } else {
            z
        };
    }
    Ok(h)
}

/// Records the loss of an output node against the batch targets.
pub fn loss_tape(
    kind: LossKind,
    tape: &mut Tape64,
    out: NodeId,
    targets: &Targets,
) -> Result<NodeId> {
    match (kind, targets) {
        (LossKind::Mse | LossKind::MseSquared, Targets::Regression(y)) => {
            let yc = tape.constant(y.clone());
            let r = tape.sub(out, yc)?;
            let sq = tape.squared_norm(r)?;
            if kind == LossKind::Mse {
                tape.sqrt(sq)
            } else {
                Ok(sq)
            }
        }
        (LossKind::CrossEntropy, Targets::Labels(l)) => tape.softmax_cross_entropy(out, l),
        (k, _) => Err(Error::InvalidConfig(format!(
            "loss {k:?} does not match the target kind"
        ))),
    }
}

/// Squared Euclidean norm of the full loss gradient.
pub fn grad_norm_sq(arch: &MlpArch, params: &MlpParams, batch: &Batch) -> Result<f64> {
    let (_, g) = loss_and_grad(arch, params, batch)?;
    Ok(g.iter().map(|m| m.frobenius_norm_sq()).sum())
}
