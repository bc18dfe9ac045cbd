use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PARABOLA_GRID: usize = 2001;

/// A curve of minima through the origin `w₀ = (0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShiftCurve {
    /// `t ↦ (t, kt²)`, curvature 2k at the origin.
    Parabola { k: f64 },
    /// The circle of radius `k` centred at `(0, k)`, curvature 1/k everywhere.
    Circle { k: f64 },
}

impl ShiftCurve {
    pub fn curvature(&self) -> f64 {
        match *self {
            ShiftCurve::Parabola { k } => 2.0 * k,
            ShiftCurve::Circle { k } => 1.0 / k,
        }
    }

    fn k(&self) -> f64 {
        match *self {
            ShiftCurve::Parabola { k } | ShiftCurve::Circle { k } => k,
        }
    }

    /// Euclidean distance from `p` to the curve.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            ShiftCurve::Circle { k } => ((p[0] * p[0] + (p[1] - k).powi(2)).sqrt() - k).abs(),
            ShiftCurve::Parabola { k } => parabola_distance(k, p),
        }
    }
}

/// Dense grid over the parameter range that can contain the nearest point, then Newton on the
/// stationarity condition from the best grid point.
fn parabola_distance(k: f64, p: [f64; 2]) -> f64 {
    let sq = |t: f64| (t - p[0]).powi(2) + (k * t * t - p[1]).powi(2);
    // the origin lies on the curve, so the nearest point is within 2‖p‖ of it
    let reach = 2.0 * (p[0] * p[0] + p[1] * p[1]).sqrt();
    if reach == 0.0 {
        return 0.0;
    }
    let step = 2.0 * reach / (PARABOLA_GRID - 1) as f64;
    let mut best_t = -reach;
    for i in 0..PARABOLA_GRID {
        let t = -reach + i as f64 * step;
        if sq(t) < sq(best_t) {
            best_t = t;
        }
    }
    let mut t = best_t;
    for _ in 0..50 {
        let d1 = 2.0 * (t - p[0]) + 4.0 * k * t * (k * t * t - p[1]);
        let d2 = 2.0 + 4.0 * k * (3.0 * k * t * t - p[1]);
        if d2 <= 0.0 {
            break;
        }
        let next = t - d1 / d2;
        if (next - best_t).abs() > step || sq(next) > sq(t) {
            break;
        }
        t = next;
    }
    sq(t).min(sq(best_t)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub curve: ShiftCurve,
    pub curvature: f64,
    pub r: f64,
    pub samples: usize,
    pub expected_distance: f64,
    pub stderr: f64,
    /// Expected distance times r⁻²; absent at r = 0.
    pub scaled: Option<f64>,
}

/// Expected distance from `w₀ + r(cos θ, sin θ)` to the curve, θ uniform on [0, 2π).
pub fn minima_shift_mc<R: Rng + ?Sized>(
    curve: ShiftCurve,
    r: f64,
    samples: usize,
    rng: &mut R,
) -> Result<ShiftReport> {
    if !(curve.k() > 0.0) || !curve.k().is_finite() {
        return Err(Error::InvalidConfig(format!(
            "curve parameter k must be positive, got {}",
            curve.k()
        )));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "shift radius must be non-negative, got {r}"
        )));
    }
    if samples == 0 {
        return Err(Error::InvalidConfig(
            "minima shift needs at least one sample".into(),
        ));
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let d = curve.distance([r * theta.cos(), r * theta.sin()]);
        sum += d;
        sum_sq += d * d;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = if samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(ShiftReport {
        curve,
        curvature: curve.curvature(),
        r,
        samples,
        expected_distance: mean,
        stderr: (var / n).sqrt(),
        scaled: (r > 0.0).then(|| mean / (r * r)),
    })
}
