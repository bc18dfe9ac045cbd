//! Minibatch training with SGD, momentum, AdaGrad, RMSProp and Adam, each with a teleport hook.

mod state;

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{loss_and_grad, Dataset, MlpArch, MlpParams};
use crate::rng::{stream, streams};
use crate::teleport::{teleport, teleport_mahalanobis, Objective, TeleportConfig, TeleportReport};
use crate::Mat;

pub use state::{adagrad_objective_weights, transport_momentum, OptimizerState};

/// What happens to the momentum buffer when the parameters are teleported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// Map the velocity blocks by the same linear maps the action applied to the weights.
    Transform,
    Keep,
    #[default]
    Reset,
}

/// Teleport objective used alongside AdaGrad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdagradObjective {
    /// Plain ½‖∇L‖², as configured in the teleport section.
    #[default]
    L2,
    /// ½‖∇L‖²_A with A = (ε + G)^(−1/2) from the current accumulator.
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Momentum {
        lr: f64,
        #[serde(default = "default_mu")]
        mu: f64,
        #[serde(default)]
        transport: Transport,
    },
    Adagrad {
        lr: f64,
        #[serde(default = "default_adagrad_eps")]
        eps: f64,
        #[serde(default)]
        objective: AdagradObjective,
    },
    Rmsprop {
        lr: f64,
        #[serde(default = "default_rmsprop_beta")]
        beta: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_mu() -> f64 {
    0.9
}
fn default_adagrad_eps() -> f64 {
    1e-10
}
fn default_rmsprop_beta() -> f64 {
    0.99
}
fn default_eps() -> f64 {
    1e-8
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn momentum(lr: f64) -> Self {
        Optimizer::Momentum {
            lr,
            mu: default_mu(),
            transport: Transport::default(),
        }
    }

    pub fn adagrad(lr: f64) -> Self {
        Optimizer::Adagrad {
            lr,
            eps: default_adagrad_eps(),
            objective: AdagradObjective::default(),
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Optimizer::Rmsprop {
            lr,
            beta: default_rmsprop_beta(),
            eps: default_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd { .. } => "sgd",
            Optimizer::Momentum { .. } => "momentum",
            Optimizer::Adagrad { .. } => "adagrad",
            Optimizer::Rmsprop { .. } => "rmsprop",
            Optimizer::Adam { .. } => "adam",
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr }
            | Optimizer::Momentum { lr, .. }
            | Optimizer::Adagrad { lr, .. }
            | Optimizer::Rmsprop { lr, .. }
            | Optimizer::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{}: lr must be > 0, got {lr}",
                self.name()
            )));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{}: {name} must lie in [0, 1), got {v}",
                    self.name()
                )))
            }
        };
        let positive = |v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{}: eps must be > 0, got {v}",
                    self.name()
                )))
            }
        };
        match *self {
            Optimizer::Sgd { .. } => Ok(()),
            Optimizer::Momentum { mu, .. } => unit("mu", mu),
            Optimizer::Adagrad { eps, .. } => positive(eps),
            Optimizer::Rmsprop { beta, eps, .. } => unit("beta", beta).and(positive(eps)),
            Optimizer::Adam {
                beta1, beta2, eps, ..
            } => unit("beta1", beta1)
                .and(unit("beta2", beta2))
                .and(positive(eps)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs at whose start the parameters are teleported.
    #[serde(default)]
    pub teleport_epochs: BTreeSet<usize>,
    #[serde(default)]
    pub teleport: TeleportConfig,
    /// Seed for the shuffle and teleport streams; experiment configs fill it from their own seed.
    #[serde(default)]
    pub seed: u64,
    /// Measure wall-clock time per epoch; when off, `wall_ms` is 0 so records are reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

impl TrainConfig {
    pub fn new(optimizer: Optimizer, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            optimizer,
            epochs,
            batch_size,
            teleport_epochs: BTreeSet::new(),
            teleport: TeleportConfig::default(),
            seed,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if let Some(&k) = self.teleport_epochs.iter().find(|&&k| k >= self.epochs) {
            return Err(Error::InvalidConfig(format!(
                "teleport epoch {k} is outside 0..{}",
                self.epochs
            )));
        }
        self.teleport.validate()?;
        let mahalanobis = matches!(
            self.optimizer,
            Optimizer::Adagrad {
                objective: AdagradObjective::Mahalanobis,
                ..
            }
        );
        if self.teleport.objective == Objective::MahalanobisGradNorm && !mahalanobis {
            return Err(Error::InvalidConfig(
                "the Mahalanobis teleport objective needs adagrad with objective = \"mahalanobis\""
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss on the whole training set after the epoch.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    /// ‖∇L‖ on the whole training set after the epoch.
    pub grad_norm: f64,
    pub wall_ms: u64,
    pub teleported: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub teleports: Vec<TeleportReport>,
    pub flags: Vec<String>,
    /// Set when training stopped early on a non-finite loss.
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Trains from `init` for `cfg.epochs` epochs of shuffled minibatches.
///
/// At the start of every epoch in `cfg.teleport_epochs` the parameters are teleported on
/// `cfg.teleport.batches` random batches of `cfg.teleport.batch_size` training samples, after
/// which the optimizer state is adjusted (momentum transport for momentum, nothing otherwise).
/// Shuffling and teleport sampling use separate streams of `cfg.seed`.
pub fn train(
    arch: &MlpArch,
    init: &MlpParams,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(MlpParams, RunRecord)> {
    cfg.validate()?;
    arch.check_params(init)?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut shuffle = stream(cfg.seed, streams::SHUFFLE);
    let mut tele_rng = stream(cfg.seed, streams::TELEPORT);
    let mut params = init.clone();
    let mut state = OptimizerState::new(&cfg.optimizer, &params);
    let mut record = RunRecord::default();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let teleported = cfg.teleport_epochs.contains(&epoch);
        if teleported {
            let batches = (0..cfg.teleport.batches)
                .map(|_| data.shuffled_subset(cfg.teleport.batch_size, &mut tele_rng))
                .collect::<Result<Vec<_>>>()?;
            let (moved, report) = match cfg.optimizer {
                Optimizer::Adagrad {
                    eps,
                    objective: AdagradObjective::Mahalanobis,
                    ..
                } => {
                    let weights = adagrad_objective_weights(&state, eps)?;
                    let tcfg = TeleportConfig {
                        objective: Objective::MahalanobisGradNorm,
                        ..cfg.teleport.clone()
                    };
                    teleport_mahalanobis(arch, &params, &batches, &tcfg, &weights, &mut tele_rng)?
                }
                _ => teleport(arch, &params, &batches, &cfg.teleport, &mut tele_rng)?,
            };
            if let Optimizer::Momentum { transport, .. } = cfg.optimizer {
                let (next, flags) = transport_momentum(&state, transport, &report.actions)?;
                state = next;
                record
                    .flags
                    .extend(flags.into_iter().map(|f| format!("epoch {epoch}: {f}")));
            }
            record
                .flags
                .extend(report.flags.iter().map(|f| format!("epoch {epoch}: {f}")));
            params = moved;
            record.teleports.push(report);
        }

        for idx in data.epoch_batches(cfg.batch_size, &mut shuffle) {
            let batch = data.select(&idx)?;
            let (l, grads) = loss_and_grad(arch, &params, &batch)?;
            if !l.is_finite() {
                record.aborted = Some(format!("non-finite minibatch loss {l} in epoch {epoch}"));
                return Ok((params, record));
            }
            state.step(&cfg.optimizer, &mut params, &grads)?;
        }

        let (train_loss, grads) = loss_and_grad(arch, &params, data)?;
        if !train_loss.is_finite() {
            record.aborted = Some(format!(
                "non-finite training loss {train_loss} after epoch {epoch}"
            ));
            return Ok((params, record));
        }
        let test_loss = test
            .map(|t| crate::models::loss(arch, &params, t))
            .transpose()?;
        let grad_norm = grads.iter().map(Mat::frobenius_norm_sq).sum::<f64>().sqrt();
        record.epochs.push(EpochRecord {
            epoch,
            train_loss,
            test_loss,
            grad_norm,
            wall_ms: if cfg.record_timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
            teleported,
        });
    }
    Ok((params, record))
}
