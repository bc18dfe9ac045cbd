//! Sharpness and curvature metrics of minima, and the correlation study over model populations.

mod sharpness;
mod study;

use serde::{Deserialize, Serialize};

pub use sharpness::{
    model_hessian, pearson, phi1, phi2, phi_sharpness, phi_sharpness_mlp, phi_sharpness_with,
    protocol_radii, unit_directions,
};
pub use study::{
    correlation_study, correlation_table, Correlation, PopulationConfig, SkippedModel, StudyResult,
    COLUMNS,
};

/// Per-model metrics; a metric that was not computed is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model_id: usize,
    pub phi1: Option<usize>,
    pub phi2: Option<f64>,
    pub phi: Option<f64>,
    pub psi: Option<f64>,
    pub validation_loss: f64,
}
