use crate::error::{Error, Result};
use crate::models::MlpParams;
use crate::optimizers::{Optimizer, Transport};
use crate::symmetry::AppliedAction;
use crate::Mat;

/// Per-weight accumulators, one matrix per layer in the shape of that layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Momentum { v: Vec<Mat> },
    Adagrad { g: Vec<Mat> },
    Rmsprop { g: Vec<Mat> },
    Adam { m: Vec<Mat>, v: Vec<Mat>, t: u64 },
}

fn zeros_like(params: &MlpParams) -> Vec<Mat> {
    params
        .weights
        .iter()
        .map(|w| Mat::zeros(w.rows(), w.cols()))
        .collect()
}

impl OptimizerState {
    pub fn new(opt: &Optimizer, params: &MlpParams) -> Self {
        match opt {
            Optimizer::Sgd { .. } => OptimizerState::Sgd,
            Optimizer::Momentum { .. } => OptimizerState::Momentum {
                v: zeros_like(params),
            },
            Optimizer::Adagrad { .. } => OptimizerState::Adagrad {
                g: zeros_like(params),
            },
            Optimizer::Rmsprop { .. } => OptimizerState::Rmsprop {
                g: zeros_like(params),
            },
            Optimizer::Adam { .. } => OptimizerState::Adam {
                m: zeros_like(params),
                v: zeros_like(params),
                t: 0,
            },
        }
    }

    /// Applies one update with the minibatch gradient `grads`.
    pub fn step(&mut self, opt: &Optimizer, params: &mut MlpParams, grads: &[Mat]) -> Result<()> {
        if grads.len() != params.weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} gradient blocks for {} weight blocks",
                grads.len(),
                params.weights.len()
            )));
        }
        match (self, *opt) {
            (OptimizerState::Sgd, Optimizer::Sgd { lr }) => {
                for (w, g) in params.weights.iter_mut().zip(grads) {
                    w.axpy(-lr, g)?;
                }
            }
            (OptimizerState::Momentum { v }, Optimizer::Momentum { lr, mu, .. }) => {
                for ((w, g), v) in params.weights.iter_mut().zip(grads).zip(v.iter_mut()) {
                    *v = v.scale(mu).add(g)?;
                    w.axpy(-lr, v)?;
                }
            }
            (OptimizerState::Adagrad { g: acc }, Optimizer::Adagrad { lr, eps, .. }) => {
                for ((w, g), a) in params.weights.iter_mut().zip(grads).zip(acc.iter_mut()) {
                    *a = a.add(&g.hadamard(g)?)?;
                    *w = w.zip_map(
                        &g.zip_map(a, "optimizer", |gi, ai| gi / (eps + ai).sqrt())?,
                        "optimizer",
                        |wi, di| wi - lr * di,
                    )?;
                }
            }
            (OptimizerState::Rmsprop { g: acc }, Optimizer::Rmsprop { lr, beta, eps }) => {
                for ((w, g), a) in params.weights.iter_mut().zip(grads).zip(acc.iter_mut()) {
                    *a = a.zip_map(g, "optimizer", |ai, gi| beta * ai + (1.0 - beta) * gi * gi)?;
                    *w = w.zip_map(
                        &g.zip_map(a, "optimizer", |gi, ai| gi / (eps + ai).sqrt())?,
                        "optimizer",
                        |wi, di| wi - lr * di,
                    )?;
                }
            }
            (
                OptimizerState::Adam { m, v, t },
                Optimizer::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
            ) => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t as i32);
                let c2 = 1.0 - beta2.powi(*t as i32);
                for (((w, g), m), v) in params
                    .weights
                    .iter_mut()
                    .zip(grads)
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = m.zip_map(g, "optimizer", |mi, gi| beta1 * mi + (1.0 - beta1) * gi)?;
                    *v = v.zip_map(g, "optimizer", |vi, gi| {
                        beta2 * vi + (1.0 - beta2) * gi * gi
                    })?;
                    let d = m.zip_map(v, "optimizer", |mi, vi| {
                        (mi / c1) / ((vi / c2).sqrt() + eps)
                    })?;
                    w.axpy(-lr, &d)?;
                }
            }
            (state, opt) => {
                return Err(Error::InvalidConfig(format!(
                    "optimizer state {} does not match optimizer {}",
                    state.name(),
                    opt.name()
                )))
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerState::Sgd => "sgd",
            OptimizerState::Momentum { .. } => "momentum",
            OptimizerState::Adagrad { .. } => "adagrad",
            OptimizerState::Rmsprop { .. } => "rmsprop",
            OptimizerState::Adam { .. } => "adam",
        }
    }
}

/// Carries the momentum buffer across a teleport.
///
/// `Transform` maps the velocity of `weights[u]` by the recorded right multiplier and that of
/// `weights[u − 1]` by the recorded left multiplier, action by action. A block the action changed
/// nonlinearly keeps its velocity, and a flag says so. States without a velocity pass through.
pub fn transport_momentum(
    state: &OptimizerState,
    policy: Transport,
    actions: &[AppliedAction],
) -> Result<(OptimizerState, Vec<String>)> {
    let OptimizerState::Momentum { v } = state else {
        return Ok((state.clone(), Vec::new()));
    };
    let mut flags = Vec::new();
    let v = match policy {
        Transport::Keep => v.clone(),
        Transport::Reset => v.iter().map(|b| Mat::zeros(b.rows(), b.cols())).collect(),
        Transport::Transform => {
            let mut v = v.clone();
            for a in actions {
                let u = a.pair;
                if u == 0 || u >= v.len() {
                    return Err(Error::InvalidConfig(format!(
                        "applied action on invalid pair {u}"
                    )));
                }
                v[u] = v[u].matmul(&a.upper)?;
                match &a.lower {
                    Some(l) => v[u - 1] = l.matmul(&v[u - 1])?,
                    None => flags.push(format!(
                        "momentum of layer {} kept: the action changed it nonlinearly",
                        u - 1
                    )),
                }
            }
            v
        }
    };
    Ok((OptimizerState::Momentum { v }, flags))
}

/// Elementwise `(ε + G)^(−1/2)` from an AdaGrad accumulator.
pub fn adagrad_objective_weights(state: &OptimizerState, eps: f64) -> Result<Vec<Mat>> {
    let OptimizerState::Adagrad { g } = state else {
        return Err(Error::InvalidConfig(format!(
            "Mahalanobis weights need an adagrad state, got {}",
            state.name()
        )));
    };
    Ok(g.iter()
        .map(|a| a.map(|x| 1.0 / (eps + x).sqrt()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::AdagradObjective;
    use crate::symmetry::ActionKind;

    fn params() -> MlpParams {
        MlpParams::new(vec![Mat::new(1, 2, vec![1.0, -2.0]).unwrap()])
    }

    #[test]
    fn adagrad_weights_reference_values() {
        let mut state = OptimizerState::new(&Optimizer::adagrad(0.1), &params());
        assert_eq!(
            adagrad_objective_weights(&state, 1.0).unwrap()[0].as_slice(),
            &[1.0, 1.0]
        );
        if let OptimizerState::Adagrad { g } = &mut state {
            g[0] = Mat::new(1, 2, vec![3.0, 3.0]).unwrap();
        }
        assert_eq!(
            adagrad_objective_weights(&state, 1.0).unwrap()[0].as_slice(),
            &[0.5, 0.5]
        );
        let sgd = OptimizerState::Sgd;
        assert!(adagrad_objective_weights(&sgd, 1.0).is_err());
    }

    #[test]
    fn transport_policies() {
        let v0 = vec![
            Mat::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Mat::new(1, 2, vec![5.0, 6.0]).unwrap(),
        ];
        let state = OptimizerState::Momentum { v: v0.clone() };
        let g = Mat::new(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let action = AppliedAction {
            pair: 1,
            kind: ActionKind::V2,
            g: g.clone(),
            upper: Mat::new(2, 2, vec![0.5, 0.0, 0.0, 1.0]).unwrap(),
            lower: Some(g),
        };
        let (kept, _) = transport_momentum(&state, Transport::Keep, &[action.clone()]).unwrap();
        assert_eq!(kept, state);
        let (reset, _) = transport_momentum(&state, Transport::Reset, &[action.clone()]).unwrap();
        let OptimizerState::Momentum { v } = reset else {
            panic!()
        };
        assert!(v.iter().all(|b| b.max_abs() == 0.0));
        let (moved, flags) =
            transport_momentum(&state, Transport::Transform, &[action.clone()]).unwrap();
        let OptimizerState::Momentum { v } = moved else {
            panic!()
        };
        assert_eq!(v[1].as_slice(), &[2.5, 6.0]);
        assert_eq!(v[0].as_slice(), &[2.0, 4.0, 3.0, 4.0]);
        assert!(flags.is_empty());

        let nonlinear = AppliedAction {
            lower: None,
            kind: ActionKind::V1,
            ..action
        };
        let (moved, flags) =
            transport_momentum(&state, Transport::Transform, &[nonlinear]).unwrap();
        let OptimizerState::Momentum { v } = moved else {
            panic!()
        };
        assert_eq!(v[0], v0[0]);
        assert_eq!(flags.len(), 1);
    }

    #[test]
    fn mismatched_state_is_an_error() {
        let mut p = params();
        let mut state = OptimizerState::Sgd;
        let grads = vec![Mat::new(1, 2, vec![1.0, 1.0]).unwrap()];
        let opt = Optimizer::Adagrad {
            lr: 0.1,
            eps: 1e-8,
            objective: AdagradObjective::L2,
        };
        assert!(state.step(&opt, &mut p, &grads).is_err());
    }
}
