use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{dot, Batch, MlpArch, MlpParams};
use crate::symmetry::{curve_jet, CurveJet, LieCoordinate};

const MIN_SPEED: f64 = 1e-12;
const MIN_RADICAND: f64 = 1e-14;
const RESAMPLE_FACTOR: usize = 10;

/// κ = √(‖γ′‖²‖γ″‖² − (γ′·γ″)²) / ‖γ′‖³.
pub fn curvature(jet: &CurveJet) -> Result<f64> {
    let (a, _, _, n1) = jet_products(jet)?;
    let rad = radicand(jet);
    Ok(rad.max(0.0).sqrt() / (n1 * a))
}

/// dκ/dt at t = 0 in terms of γ′, γ″, γ‴.
pub fn curvature_derivative(jet: &CurveJet) -> Result<f64> {
    let (a, b, _, n1) = jet_products(jet)?;
    let rad = radicand(jet);
    if rad <= MIN_RADICAND {
        return Err(Error::Degenerate(format!(
            "curvature derivative undefined at zero curvature (radicand {rad:e})"
        )));
    }
    let c = dot(&jet.j2, &jet.j3);
    let d = dot(&jet.j1, &jet.j3);
    let num = (a * c - b * d) * a / rad.sqrt() - rad.sqrt() * 3.0 * b;
    Ok(num / (a * a * n1))
}

/// (‖γ′‖², γ′·γ″, ‖γ″‖², ‖γ′‖) with the speed check applied.
fn jet_products(jet: &CurveJet) -> Result<(f64, f64, f64, f64)> {
    let a = dot(&jet.j1, &jet.j1);
    let n1 = a.sqrt();
    if !(n1 > MIN_SPEED) {
        return Err(Error::Degenerate(format!(
            "curve speed {n1:e} is below {MIN_SPEED:e}"
        )));
    }
    Ok((a, dot(&jet.j1, &jet.j2), dot(&jet.j2, &jet.j2), n1))
}

fn radicand(jet: &CurveJet) -> f64 {
    let a = dot(&jet.j1, &jet.j1);
    let b = dot(&jet.j1, &jet.j2);
    let c = dot(&jet.j2, &jet.j2);
    a * c - b * b
}

/// Draws `k` Lie coordinates, each on a uniformly chosen layer pair.
pub fn sample_lie<R: Rng + ?Sized>(arch: &MlpArch, k: usize, rng: &mut R) -> Vec<LieCoordinate> {
    let pairs = arch.pairs();
    (0..k)
        .map(|_| {
            let u = pairs[rng.random_range(0..pairs.len())];
            LieCoordinate::sample(u, arch.dims[u], rng)
        })
        .collect()
}

/// Mean curvature over the given curves; degenerate curves are skipped.
///
/// Returns the mean and the number of curves that contributed.
pub fn psi_with(
    arch: &MlpArch,
    params: &MlpParams,
    batch: &Batch,
    samples: &[LieCoordinate],
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut used = 0;
    for lie in samples {
        let (jet, _) = curve_jet(lie, arch, params, batch)?;
        match curvature(&jet) {
            Ok(k) if k.is_finite() => {
                total += k;
                used += 1;
            }
            Ok(_) | Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Degenerate(format!(
            "all {} curvature samples are degenerate",
            samples.len()
        )));
    }
    Ok((total / used as f64, used))
}

/// ψ(w, k): mean curvature of `k` random symmetry curves, resampling degenerate draws.
pub fn psi<R: Rng + ?Sized>(
    arch: &MlpArch,
    params: &MlpParams,
    batch: &Batch,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("psi needs k >= 1".into()));
    }
    let mut values = Vec::with_capacity(k);
    let mut attempts = 0;
    while values.len() < k && attempts < RESAMPLE_FACTOR * k {
        attempts += 1;
        let lie = &sample_lie(arch, 1, rng)[0];
        if let Ok((v, _)) = psi_with(arch, params, batch, std::slice::from_ref(lie)) {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Degenerate(format!(
            "no valid curvature sample in {attempts} draws"
        )));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
