//! Low-dimensional models whose orbits are known in closed form, for checking teleport behavior.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::fd_gradient;
use crate::error::{Error, Result};
use crate::metrics::{phi_sharpness_with, unit_directions};
use crate::symmetry::{curvature, CurveJet};
use crate::teleport::{ascend, Objective};
use crate::Mat;

/// A loss on ℝⁿ with a group acting on a fixed base point.
///
/// The group is described by a coordinate matrix `g`; `act(g)` returns the moved point.
pub trait OrbitModel {
    /// The coordinate of the identity element.
    fn identity(&self) -> Mat;
    fn act(&self, g: &Mat) -> Result<Vec<f64>>;
    fn loss(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;

    fn valid(&self, g: &Mat) -> bool {
        g.all_finite()
    }

    /// Jet at `w` of the symmetry curve generated by the Lie coordinate `m`.
    fn curve_jet(&self, w: &[f64], m: f64) -> CurveJet;
}

/// ½(w₁² + λ²w₂²) with the group shifting the elliptic angle along the level set.
///
/// The coordinate is the angle θ; the identity is θ = 0. At λ = 1 the orbits are circles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationEllipse {
    pub lambda: f64,
    pub w: [f64; 2],
}

impl RotationEllipse {
    fn polar(&self, w: &[f64]) -> (f64, f64) {
        let (a, b) = (w[0], self.lambda * w[1]);
        ((a * a + b * b).sqrt(), b.atan2(a))
    }

    fn at(&self, rho: f64, phi: f64) -> Vec<f64> {
        vec![rho * phi.cos(), rho * phi.sin() / self.lambda]
    }
}

impl OrbitModel for RotationEllipse {
    fn identity(&self) -> Mat {
        Mat::scalar(0.0)
    }

    fn act(&self, g: &Mat) -> Result<Vec<f64>> {
        let (rho, phi) = self.polar(&self.w);
        Ok(self.at(rho, phi + g.item()))
    }

    fn loss(&self, w: &[f64]) -> f64 {
        0.5 * (w[0] * w[0] + self.lambda * self.lambda * w[1] * w[1])
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vec![w[0], self.lambda * self.lambda * w[1]]
    }

    fn curve_jet(&self, w: &[f64], m: f64) -> CurveJet {
        let (rho, phi) = self.polar(w);
        let d = |k: i32| {
            let a = phi + k as f64 * std::f64::consts::FRAC_PI_2;
            let s = m.powi(k);
            vec![s * rho * a.cos(), s * rho * a.sin() / self.lambda]
        };
        CurveJet::new(d(0), d(1), d(2), d(3)).expect("equal lengths")
    }
}

/// (s‖u‖² − 1)² over (u₁, u₂, s), with the scaling group `u ↦ c u`, `s ↦ s / c²`.
///
/// Symmetry curves rotate `u`, so every curve through a point is a circle of radius ‖u‖.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleOrbit {
    pub u: [f64; 2],
    pub s: f64,
}

impl OrbitModel for CircleOrbit {
    fn identity(&self) -> Mat {
        Mat::scalar(1.0)
    }

    fn act(&self, g: &Mat) -> Result<Vec<f64>> {
        let c = g.item();
        if !(c > 0.0) {
            return Err(Error::Degenerate(format!("scaling {c} is not positive")));
        }
        Ok(vec![c * self.u[0], c * self.u[1], self.s / (c * c)])
    }

    fn valid(&self, g: &Mat) -> bool {
        g.item() > 0.0 && g.item().is_finite()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        (w[2] * (w[0] * w[0] + w[1] * w[1]) - 1.0).powi(2)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n2 = w[0] * w[0] + w[1] * w[1];
        let r = 2.0 * (w[2] * n2 - 1.0);
        vec![r * 2.0 * w[2] * w[0], r * 2.0 * w[2] * w[1], r * n2]
    }

    fn curve_jet(&self, w: &[f64], m: f64) -> CurveJet {
        // derivatives of R(mt)u: multiplication by (mJ)^k with J the quarter turn
        let turn = |v: [f64; 2]| [-m * v[1], m * v[0]];
        let u0 = [w[0], w[1]];
        let u1 = turn(u0);
        let u2 = turn(u1);
        let u3 = turn(u2);
        let full = |v: [f64; 2], s: f64| vec![v[0], v[1], s];
        CurveJet::new(full(u0, w[2]), full(u1, 0.0), full(u2, 0.0), full(u3, 0.0))
            .expect("equal lengths")
    }
}

/// (xy − 1)² with the scaling group `(x, y) ↦ (c x, y / c)`.
///
/// The minima form the two branches of the hyperbola xy = 1, one basin per branch; along a
/// branch the flattest point is |x| = |y|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoBasin {
    pub x: f64,
    pub y: f64,
}

impl OrbitModel for TwoBasin {
    fn identity(&self) -> Mat {
        Mat::scalar(1.0)
    }

    fn act(&self, g: &Mat) -> Result<Vec<f64>> {
        let c = g.item();
        if !(c > 0.0) {
            return Err(Error::Degenerate(format!("scaling {c} is not positive")));
        }
        Ok(vec![c * self.x, self.y / c])
    }

    fn valid(&self, g: &Mat) -> bool {
        g.item() > 0.0 && g.item().is_finite()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        (w[0] * w[1] - 1.0).powi(2)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let r = 2.0 * (w[0] * w[1] - 1.0);
        vec![r * w[1], r * w[0]]
    }

    fn curve_jet(&self, w: &[f64], m: f64) -> CurveJet {
        let d = |k: i32| vec![m.powi(k) * w[0], (-m).powi(k) * w[1]];
        CurveJet::new(d(0), d(1), d(2), d(3)).expect("equal lengths")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitReport {
    pub g: Mat,
    pub point: Vec<f64>,
    pub trajectory: Vec<f64>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Teleports an [`OrbitModel`] along its orbit; the objective gradient is taken by central
/// differences in the group coordinate.
pub fn teleport_orbit<M: OrbitModel + ?Sized>(
    model: &M,
    objective: &Objective,
    lr: f64,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<OrbitReport> {
    let start = model.act(&model.identity())?;
    let value: Box<dyn Fn(&[f64]) -> Result<f64>> = match objective {
        Objective::GradNorm => {
            Box::new(|w| Ok(0.5 * model.gradient(w).iter().map(|x| x * x).sum::<f64>()))
        }
        Objective::MahalanobisGradNorm => {
            return Err(Error::InvalidConfig(
                "orbit models have no Mahalanobis weights".into(),
            ))
        }
        Objective::Sharpness {
            radii, directions, ..
        } => {
            let dirs = unit_directions(start.len(), *directions, rng);
            let radii = radii.clone();
            Box::new(move |w| phi_sharpness_with(|p| Ok(model.loss(p)), w, &radii, &dirs))
        }
        Objective::Curvature { k, .. } => {
            let ms: Vec<f64> = (0..*k)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            Box::new(move |w| {
                let total: f64 = ms
                    .iter()
                    .map(|&m| curvature(&model.curve_jet(w, m)))
                    .collect::<Result<Vec<_>>>()?
                    .iter()
                    .sum();
                Ok(total / ms.len() as f64)
            })
        }
    };
    let at = |g: &Mat| -> Result<f64> { value(&model.act(g)?) };
    let shape = model.identity().shape();
    let ascent = ascend(
        &model.identity(),
        lr,
        steps,
        objective.sign(),
        |g| model.valid(g),
        at,
        |g| {
            let d = fd_gradient(
                |flat| at(&Mat::new(shape.0, shape.1, flat.to_vec())?),
                g.as_slice(),
                None,
            )?;
            Mat::new(shape.0, shape.1, d)
        },
    )?;
    let point = model.act(&ascent.g)?;
    Ok(OrbitReport {
        objective_before: ascent.start,
        objective_after: ascent.end(),
        loss_before: model.loss(&start),
        loss_after: model.loss(&point),
        trajectory: ascent.trajectory,
        g: ascent.g,
        point,
    })
}
