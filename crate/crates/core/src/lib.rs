//! Symmetry teleportation for multilayer perceptrons.
//!
//! The numeric core ([`linalg`], [`autodiff`]) is generic over [`Scalar`]; the model,
//! teleportation and metric layers work in `f64` through the aliases below.

pub mod autodiff;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod optimizers;
pub mod rng;
pub mod scalar;
pub mod symmetry;
pub mod teleport;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat = linalg::Matrix<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Eigen = linalg::EigenResult<f64>;
