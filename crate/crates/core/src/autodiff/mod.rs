//! Tape-based reverse-mode differentiation with double-backprop support, and
//! finite-difference oracles.

pub mod fd;
mod tape;

pub use fd::{fd_gradient, fd_hessian, fd_jet};
pub use tape::{NodeId, Tape};

pub(crate) use tape::{column_softmax, cross_entropy_value, leaky};
