use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{flatten, symmetric_eigenvalues, unflatten, EIGEN_DIM_LIMIT};
use crate::metrics::sharpness::{
    model_hessian, pearson, phi1, phi2, phi_sharpness_mlp, protocol_radii, unit_directions,
};
use crate::metrics::MetricsRecord;
use crate::models::{loss, loss_and_grad, Dataset, Init, MlpArch, MlpParams};
use crate::optimizers::{train, Optimizer, TrainConfig};
use crate::rng::{stream, streams};
use crate::symmetry::psi;

/// A population of independently initialized models and the metrics computed on each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub models: usize,
    /// Training schedule shared by every model; its `seed` is replaced by the per-model seed.
    pub train: TrainConfig,
    #[serde(default)]
    pub init: Init,
    #[serde(default = "protocol_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_directions")]
    pub directions: usize,
    /// Symmetry curves per model for ψ.
    #[serde(default = "default_curves")]
    pub curves: usize,
    #[serde(default = "default_phi1_eps")]
    pub phi1_eps: f64,
    #[serde(default = "default_phi2_k")]
    pub phi2_k: usize,
}

fn default_directions() -> usize {
    200
}

fn default_curves() -> usize {
    1
}

fn default_phi1_eps() -> f64 {
    100.0
}

fn default_phi2_k() -> usize {
    200
}

impl PopulationConfig {
    /// The paper's protocol constants around a training schedule: SGD at 0.01 with minibatch 20.
    pub fn paper(models: usize, epochs: usize) -> Self {
        Self {
            models,
            train: TrainConfig::new(Optimizer::sgd(0.01), epochs, 20, 0),
            init: Init::FanIn,
            radii: protocol_radii(),
            directions: default_directions(),
            curves: default_curves(),
            phi1_eps: default_phi1_eps(),
            phi2_k: default_phi2_k(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models < 3 {
            return Err(Error::InvalidConfig(format!(
                "a study needs at least 3 models, got {}",
                self.models
            )));
        }
        if self.radii.is_empty() || self.directions == 0 {
            return Err(Error::InvalidConfig(
                "sharpness needs at least one radius and one direction".into(),
            ));
        }
        if self.curves == 0 {
            return Err(Error::InvalidConfig("psi needs at least one curve".into()));
        }
        self.train.validate()
    }
}

/// A model whose training or metrics failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedModel {
    pub model_id: usize,
    pub reason: String,
}

/// Pearson r between two record columns over the records where both are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub x: String,
    pub y: String,
    pub n: usize,
    pub r: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub records: Vec<MetricsRecord>,
    pub skipped: Vec<SkippedModel>,
    /// Metrics that could not be computed for an otherwise valid model.
    pub notes: Vec<String>,
    pub correlations: Vec<Correlation>,
}

impl StudyResult {
    pub fn r(&self, x: &str, y: &str) -> Option<f64> {
        self.correlations
            .iter()
            .find(|c| c.x == x && c.y == y)
            .and_then(|c| c.r)
    }
}

pub const COLUMNS: [&str; 5] = ["phi1", "phi2", "phi", "psi", "validation_loss"];

fn column(record: &MetricsRecord, name: &str) -> Option<f64> {
    match name {
        "phi1" => record.phi1.map(|v| v as f64),
        "phi2" => record.phi2,
        "phi" => record.phi,
        "psi" => record.psi,
        "validation_loss" => Some(record.validation_loss),
        _ => None,
    }
}

/// Pearson r for every pair of record columns, metrics first and validation loss last.
pub fn correlation_table(records: &[MetricsRecord]) -> Vec<Correlation> {
    let mut out = Vec::new();
    for (i, x) in COLUMNS.iter().enumerate() {
        for y in &COLUMNS[i + 1..] {
            let (xs, ys): (Vec<f64>, Vec<f64>) = records
                .iter()
                .filter_map(|r| Some((column(r, x)?, column(r, y)?)))
                .unzip();
            let (r, error) = match pearson(&xs, &ys) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(Correlation {
                x: x.to_string(),
                y: y.to_string(),
                n: xs.len(),
                r,
                error,
            });
        }
    }
    out
}

struct Measured {
    record: MetricsRecord,
    notes: Vec<String>,
}

fn measure(
    arch: &MlpArch,
    train_set: &Dataset,
    validation: &Dataset,
    cfg: &PopulationConfig,
    model_id: usize,
    seed: u64,
) -> Result<Measured> {
    let init = MlpParams::init(arch, cfg.init, &mut stream(seed, streams::INIT));
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (params, run) = train(arch, &init, train_set, None, &train_cfg)?;
    if let Some(reason) = run.aborted {
        return Err(Error::NonFinite(reason));
    }
    let mut rng = stream(seed, streams::METRICS);
    let dirs = unit_directions(arch.param_count(), cfg.directions, &mut rng);
    let phi = phi_sharpness_mlp(arch, &params, train_set, &cfg.radii, &dirs)?;
    let psi = psi(arch, &params, train_set, cfg.curves, &mut rng)?;
    let validation_loss = loss(arch, &params, validation)?;
    if !validation_loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }

    let mut notes = Vec::new();
    let (mut p1, mut p2) = (None, None);
    if arch.param_count() <= EIGEN_DIM_LIMIT {
        let shapes = params.shapes();
        let grad = |w: &[f64]| {
            let (_, g) = loss_and_grad(arch, &MlpParams::new(unflatten(w, &shapes)), train_set)?;
            Ok(flatten(&g))
        };
        let mut eig = symmetric_eigenvalues(&model_hessian(grad, &params.flatten())?)?.eigenvalues;
        eig.sort_by(|a, b| b.total_cmp(a));
        p1 = Some(phi1(&eig, cfg.phi1_eps));
        match phi2(&eig, cfg.phi2_k.min(eig.len())) {
            Ok(v) => p2 = Some(v),
            Err(e) => notes.push(format!("model {model_id}: phi2 absent: {e}")),
        }
    }
    Ok(Measured {
        record: MetricsRecord {
            model_id,
            phi1: p1,
            phi2: p2,
            phi: Some(phi),
            psi: Some(psi),
            validation_loss,
        },
        notes,
    })
}

/// Trains `cfg.models` models from independent seeds and correlates their metrics.
///
/// Model seeds are drawn from `rng` before any training, so the result does not depend on how
/// the population is scheduled across threads. φ and ψ are measured on the training set, the
/// validation loss on `validation`. φ₁ and φ₂ are filled only for models within the Hessian gate.
pub fn correlation_study<R: Rng + ?Sized>(
    arch: &MlpArch,
    train_set: &Dataset,
    validation: &Dataset,
    cfg: &PopulationConfig,
    rng: &mut R,
) -> Result<StudyResult> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.models).map(|_| rng.random()).collect();
    let measured: Vec<(usize, Result<Measured>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(id, &seed)| (id, measure(arch, train_set, validation, cfg, id, seed)))
        .collect();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut notes = Vec::new();
    for (model_id, m) in measured {
        match m {
            Ok(m) => {
                records.push(m.record);
                notes.extend(m.notes);
            }
            Err(e) => {
                log::warn!("model {model_id} skipped: {e}");
                skipped.push(SkippedModel {
                    model_id,
                    reason: e.to_string(),
                });
            }
        }
    }
    let correlations = correlation_table(&records);
    Ok(StudyResult {
        records,
        skipped,
        notes,
        correlations,
    })
}
