use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::fd_hessian;
use crate::error::{Error, Result};
use crate::linalg::{unflatten, EIGEN_DIM_LIMIT};
use crate::models::{output_loss, Batch, MlpArch, MlpParams};
use crate::Mat;

/// The perturbation radii of the correlation protocol: 20 evenly spaced values in [0.001, 0.191].
pub fn protocol_radii() -> Vec<f64> {
    (0..20).map(|i| 0.001 + 0.01 * i as f64).collect()
}

/// φ₁: the number of eigenvalues strictly above `eps`.
pub fn phi1(eigenvalues: &[f64], eps: f64) -> usize {
    eigenvalues.iter().filter(|&&l| l > eps).count()
}

/// φ₂: the sum of the logs of the `k` largest eigenvalues.
///
/// `eigenvalues` must be sorted in descending order.
pub fn phi2(eigenvalues: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > eigenvalues.len() {
        return Err(Error::InvalidConfig(format!(
            "phi2 needs 1 <= k <= {}, got {k}",
            eigenvalues.len()
        )));
    }
    let mut total = 0.0;
    for (i, &l) in eigenvalues[..k].iter().enumerate() {
        if !(l > 0.0) {
            return Err(Error::Domain(format!(
                "eigenvalue {i} is {l}, log undefined"
            )));
        }
        total += l.ln();
    }
    Ok(total)
}

/// `count` directions drawn uniformly from the unit sphere in ℝⁿ.
pub fn unit_directions<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// φ(w, T, D): mean of `L(w + t d)` over the given radii and directions.
pub fn phi_sharpness_with<F>(
    mut loss: F,
    w: &[f64],
    radii: &[f64],
    directions: &[Vec<f64>],
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if radii.is_empty() || directions.is_empty() {
        return Err(Error::InvalidConfig(
            "sharpness needs at least one radius and one direction".into(),
        ));
    }
    let mut point = vec![0.0; w.len()];
    let mut total = 0.0;
    for (ti, &t) in radii.iter().enumerate() {
        for (di, d) in directions.iter().enumerate() {
            if d.len() != w.len() {
                return Err(Error::BadLength {
                    rows: w.len(),
                    cols: 1,
                    len: d.len(),
                });
            }
            for ((p, x), y) in point.iter_mut().zip(w).zip(d) {
                *p = x + t * y;
            }
            let v = loss(&point)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "perturbed loss at radius index {ti} (t = {t}), direction {di}"
                )));
            }
            total += v;
        }
    }
    Ok(total / (radii.len() * directions.len()) as f64)
}

/// φ with `count` fresh random directions.
pub fn phi_sharpness<F, R>(
    loss: F,
    w: &[f64],
    radii: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    let dirs = unit_directions(w.len(), count, rng);
    phi_sharpness_with(loss, w, radii, &dirs)
}

/// φ for an MLP loss on `batch`, identical in value to [`phi_sharpness_with`] on the flattened
/// weights.
///
/// The first layer is linear in its weights, so `(W₀ + tD₀)X = W₀X + t·D₀X` and the product with
/// the batch is formed once per direction rather than once per (radius, direction).
pub fn phi_sharpness_mlp(
    arch: &MlpArch,
    params: &MlpParams,
    batch: &Batch,
    radii: &[f64],
    directions: &[Vec<f64>],
) -> Result<f64> {
    if radii.is_empty() || directions.is_empty() {
        return Err(Error::InvalidConfig(
            "sharpness needs at least one radius and one direction".into(),
        ));
    }
    arch.check_params(params)?;
    let shapes = params.shapes();
    let n = arch.param_count();
    let base = params.weights[0].matmul(&batch.x)?;
    let mut total = 0.0;
    for (di, d) in directions.iter().enumerate() {
        if d.len() != n {
            return Err(Error::BadLength {
                rows: n,
                cols: 1,
                len: d.len(),
            });
        }
        let blocks = unflatten(d, &shapes);
        let shift = blocks[0].matmul(&batch.x)?;
        for (ti, &t) in radii.iter().enumerate() {
            let mut z = base.clone();
            z.axpy(t, &shift)?;
            for (w, dw) in params.weights.iter().zip(&blocks).skip(1) {
                let mut wt = w.clone();
                wt.axpy(t, dw)?;
                let h = z.map(|v| arch.sigma(v));
                z = wt.matmul(&h)?;
            }
            let v = output_loss(arch.loss, &z, &batch.y)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "perturbed loss at radius index {ti} (t = {t}), direction {di}"
                )));
            }
            total += v;
        }
    }
    Ok(total / (radii.len() * directions.len()) as f64)
}

/// Hessian by central differences of an analytic gradient, gated at 2000 parameters.
pub fn model_hessian<G>(grad: G, w: &[f64]) -> Result<Mat>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if w.len() > EIGEN_DIM_LIMIT {
        return Err(Error::DimensionGate {
            dim: w.len(),
            limit: EIGEN_DIM_LIMIT,
            hint: "; Hessian metrics are meant for small synthetic models",
        });
    }
    fd_hessian(grad, w, None)
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "pearson needs two samples of equal length >= 3, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
