//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use teleport_core::metrics::PopulationConfig;
use teleport_core::models::{Init, LossKind, MlpArch};
use teleport_core::optimizers::{Optimizer, TrainConfig};
use teleport_core::theory::ShiftCurve;

use crate::error::{CoreContext, ExpError, Result};
use crate::idx;

/// Environment variable whose value replaces the root that relative dataset paths resolve against.
pub const DATA_ROOT_ENV: &str = "TELEPORT_OPT_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// One training run, plus a no-teleport baseline when a teleport schedule is set.
    Train,
    /// Teleport against no-teleport for several optimizers over several seeds.
    TeleportSweep,
    /// Sharpness and curvature against validation loss over a model population.
    Correlate,
    /// Numerical checks of the Newton decomposition and level-set optimality results.
    TheoryCheck,
    /// Expected displacement of a minimum under random shifts, per curvature.
    ShiftMc,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Train,
        ExperimentKind::TeleportSweep,
        ExperimentKind::Correlate,
        ExperimentKind::TheoryCheck,
        ExperimentKind::ShiftMc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::TeleportSweep => "teleport-sweep",
            ExperimentKind::Correlate => "correlate",
            ExperimentKind::TheoryCheck => "theory-check",
            ExperimentKind::ShiftMc => "shift-mc",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            ExperimentKind::Train => {
                "train one model; adds a no-teleport baseline when teleport_epochs is set"
            }
            ExperimentKind::TeleportSweep => {
                "teleport vs no teleport for each optimizer over several seeds"
            }
            ExperimentKind::Correlate => {
                "phi, psi and Hessian metrics against validation loss over a population"
            }
            ExperimentKind::TheoryCheck => {
                "Newton decomposition, bracket optimality and one-teleport checks"
            }
            ExperimentKind::ShiftMc => {
                "expected distance to a shifted curve of minima, per curvature"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// A directory holding `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`.
    Mnist {
        path: PathBuf,
        /// Keep the first `subset` samples after a seeded shuffle.
        subset: Option<usize>,
        #[serde(default = "default_split")]
        split: f64,
    },
    /// Same layout and format as MNIST.
    Fashion {
        path: PathBuf,
        subset: Option<usize>,
        #[serde(default = "default_split")]
        split: f64,
    },
    /// Uniform [0, 1] inputs and regression targets.
    Synthetic {
        /// `[input width, output width]`
        dims: [usize; 2],
        count: usize,
        /// Defaults to the experiment seed.
        seed: Option<u64>,
        /// Fraction kept for training; the rest is the test split. Absent means no test split.
        split: Option<f64>,
    },
}

fn default_split() -> f64 {
    0.8
}

impl DatasetConfig {
    /// Resolves a relative dataset path against `root` (or leaves it relative to the working
    /// directory when there is no root).
    pub fn resolved_path(&self, root: Option<&Path>) -> Option<PathBuf> {
        match self {
            DatasetConfig::Mnist { path, .. } | DatasetConfig::Fashion { path, .. } => {
                Some(match root {
                    Some(r) if path.is_relative() => r.join(path),
                    _ => path.clone(),
                })
            }
            DatasetConfig::Synthetic { .. } => None,
        }
    }

    fn validate(&self, origin: &str, root: Option<&Path>) -> Result<()> {
        let check_split = |split: f64| {
            if split > 0.0 && split < 1.0 {
                Ok(())
            } else {
                Err(ExpError::config(
                    origin,
                    format!("dataset split must be in (0, 1), got {split}"),
                ))
            }
        };
        match self {
            DatasetConfig::Mnist { subset, split, .. }
            | DatasetConfig::Fashion { subset, split, .. } => {
                check_split(*split)?;
                if *subset == Some(0) {
                    return Err(ExpError::config(origin, "dataset subset must be positive"));
                }
                let dir = self.resolved_path(root).expect("IDX datasets have a path");
                for file in [idx::TRAIN_IMAGES, idx::TRAIN_LABELS] {
                    if !dir.join(file).is_file() {
                        return Err(ExpError::config(
                            origin,
                            format!("dataset file {} does not exist", dir.join(file).display()),
                        ));
                    }
                }
            }
            DatasetConfig::Synthetic {
                dims, count, split, ..
            } => {
                if dims.contains(&0) || *count == 0 {
                    return Err(ExpError::config(
                        origin,
                        "synthetic dims and count must be positive",
                    ));
                }
                if let Some(s) = split {
                    check_split(*s)?;
                }
            }
        }
        Ok(())
    }

    fn widths(&self) -> (usize, usize) {
        match self {
            DatasetConfig::Mnist { .. } | DatasetConfig::Fashion { .. } => (784, idx::CLASSES),
            DatasetConfig::Synthetic { dims, .. } => (dims[0], dims[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub init: Init,
    /// LeakyReLU negative slope; the library default when absent.
    pub slope: Option<f64>,
}

impl ModelConfig {
    pub fn arch(&self) -> teleport_core::Result<MlpArch> {
        match self.slope {
            Some(s) => MlpArch::with_slope(self.dims.clone(), s, self.loss),
            None => MlpArch::new(self.dims.clone(), self.loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub optimizers: Vec<Optimizer>,
    pub seeds: usize,
    /// Fraction of seeds on which the teleport run must end at or below the baseline loss.
    #[serde(default = "default_require")]
    pub require: f64,
}

fn default_require() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub lemma_samples: usize,
    pub b2_samples: usize,
    pub b3_samples: usize,
    pub b3_dim: usize,
    pub newton_samples: usize,
    pub flow_steps: usize,
    pub dt: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            lemma_samples: 200,
            b2_samples: 100,
            b3_samples: 50,
            b3_dim: 3,
            newton_samples: 50,
            flow_steps: 10_000,
            dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    Parabola,
    Circle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub curve: CurveKind,
    pub ks: Vec<f64>,
    pub r: f64,
    #[serde(default = "default_shift_samples")]
    pub samples: usize,
}

fn default_shift_samples() -> usize {
    10_000
}

impl ShiftConfig {
    pub fn curve(&self, k: f64) -> ShiftCurve {
        match self.curve {
            CurveKind::Parabola => ShiftCurve::Parabola { k },
            CurveKind::Circle => ShiftCurve::Circle { k },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Output directory; `out/<experiment>` when absent.
    pub output: Option<PathBuf>,
    pub dataset: Option<DatasetConfig>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub sweep: Option<SweepConfig>,
    pub population: Option<PopulationConfig>,
    #[serde(default)]
    pub theory: TheoryConfig,
    pub shift: Option<ShiftConfig>,
}

pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExpError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| ExpError::config(origin, e.to_string()))?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(self.experiment.name()))
    }

    fn require<'a, T>(&self, origin: &str, section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section.as_ref().ok_or_else(|| {
            ExpError::config(
                origin,
                format!(
                    "experiment {} needs a [{name}] section",
                    self.experiment.name()
                ),
            )
        })
    }

    fn check_model(&self, origin: &str) -> Result<()> {
        let model = self.require(origin, &self.model, "model")?;
        let arch = model.arch().context(format!("config {origin}: [model]"))?;
        let dataset = self.require(origin, &self.dataset, "dataset")?;
        let (d_in, d_out) = dataset.widths();
        if arch.dims[0] != d_in || arch.dims[arch.dims.len() - 1] != d_out {
            return Err(ExpError::config(
                origin,
                format!(
                    "model widths {:?} do not fit the dataset ({d_in} inputs, {d_out} outputs)",
                    arch.dims
                ),
            ));
        }
        let classification = !matches!(dataset, DatasetConfig::Synthetic { .. });
        if classification != (arch.loss == LossKind::CrossEntropy) {
            return Err(ExpError::config(
                origin,
                "IDX datasets need the cross-entropy loss and synthetic data a regression loss",
            ));
        }
        Ok(())
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        let root = data_root();
        if let Some(d) = &self.dataset {
            d.validate(origin, root.as_deref())?;
        }
        let train_ctx = format!("config {origin}: [train]");
        match self.experiment {
            ExperimentKind::Train => {
                self.check_model(origin)?;
                self.require(origin, &self.train, "train")?
                    .validate()
                    .context(train_ctx)?;
            }
            ExperimentKind::TeleportSweep => {
                self.check_model(origin)?;
                let train = self.require(origin, &self.train, "train")?;
                train.validate().context(train_ctx.clone())?;
                if train.teleport_epochs.is_empty() {
                    return Err(ExpError::config(
                        origin,
                        "[train] teleport_epochs must be non-empty for a teleport sweep",
                    ));
                }
                let sweep = self.require(origin, &self.sweep, "sweep")?;
                if sweep.optimizers.is_empty() || sweep.seeds == 0 {
                    return Err(ExpError::config(
                        origin,
                        "[sweep] needs at least one optimizer and one seed",
                    ));
                }
                if !(0.0..=1.0).contains(&sweep.require) {
                    return Err(ExpError::config(
                        origin,
                        format!("[sweep] require must be in [0, 1], got {}", sweep.require),
                    ));
                }
                for opt in &sweep.optimizers {
                    TrainConfig {
                        optimizer: *opt,
                        ..train.clone()
                    }
                    .validate()
                    .context(format!("config {origin}: [sweep]"))?;
                }
            }
            ExperimentKind::Correlate => {
                self.check_model(origin)?;
                self.require(origin, &self.population, "population")?
                    .validate()
                    .context(format!("config {origin}: [population]"))?;
            }
            ExperimentKind::TheoryCheck => {
                let t = &self.theory;
                if t.b3_dim < 2 || t.flow_steps == 0 || !(t.dt > 0.0) {
                    return Err(ExpError::config(
                        origin,
                        "[theory] needs b3_dim >= 2, flow_steps >= 1 and dt > 0",
                    ));
                }
            }
            ExperimentKind::ShiftMc => {
                let s = self.require(origin, &self.shift, "shift")?;
                if s.ks.is_empty()
                    || s.ks.iter().any(|&k| !(k > 0.0))
                    || !(s.r >= 0.0)
                    || s.samples == 0
                {
                    return Err(ExpError::config(
                        origin,
                        "[shift] needs positive ks, r >= 0 and samples >= 1",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH_TRAIN: &str = r#"
experiment = "train"
seed = 3

[dataset]
kind = "synthetic"
dims = [5, 8]
count = 40

[model]
dims = [5, 6, 7, 8]

[train]
epochs = 2
batch_size = 4
optimizer = { kind = "sgd", lr = 0.01 }
"#;

    #[test]
    fn parses_a_minimal_config() {
        let cfg = ExperimentConfig::parse(SYNTH_TRAIN, "inline").unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Train);
        assert_eq!(cfg.output_dir(), PathBuf::from("out/train"));
        assert_eq!(cfg.train.unwrap().optimizer, Optimizer::sgd(0.01));
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_fail() {
        let no_seed = SYNTH_TRAIN.replace("seed = 3\n", "");
        assert!(ExperimentConfig::parse(&no_seed, "inline").is_err());
        let extra = SYNTH_TRAIN.replace("seed = 3", "seed = 3\ncolour = 1");
        assert!(ExperimentConfig::parse(&extra, "inline").is_err());
    }

    #[test]
    fn out_of_range_training_fields_are_rejected() {
        for (from, to) in [
            ("batch_size = 4", "batch_size = 0"),
            ("lr = 0.01", "lr = -1.0"),
            ("epochs = 2", "epochs = 2\nteleport_epochs = [2]"),
        ] {
            let bad = SYNTH_TRAIN.replace(from, to);
            assert!(ExperimentConfig::parse(&bad, "inline").is_err(), "{to}");
        }
    }

    #[test]
    fn model_must_fit_the_data() {
        let bad = SYNTH_TRAIN.replace("dims = [5, 6, 7, 8]", "dims = [4, 6, 8]");
        let err = ExperimentConfig::parse(&bad, "inline").unwrap_err();
        assert!(err.to_string().contains("do not fit"));
    }

    #[test]
    fn missing_idx_files_fail_at_load() {
        let text = r#"
experiment = "correlate"
seed = 0
[dataset]
kind = "mnist"
path = "/nonexistent/mnist"
"#;
        let err = ExperimentConfig::parse(text, "inline").unwrap_err();
        assert!(err.to_string().contains("does not exist"));
    }
}
