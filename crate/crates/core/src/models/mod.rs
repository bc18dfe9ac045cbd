//! Losses optimized in the experiments: bias-free LeakyReLU MLPs and closed-form test functions.

mod closed_form;
mod data;
mod mlp;

pub(crate) use closed_form::dot;
pub use closed_form::{
    booth_loss, ellipse_loss, quadratic_loss, QuadraticSpec, QuarticSpec, ScalarField,
};
pub use data::{uniform_regression, Batch, Dataset, Targets};
pub use mlp::{
    cross_entropy_loss, forward_tape, grad_norm_sq, loss, loss_and_grad, loss_tape, mlp_forward,
    mse_loss, output_loss, Forward, Init, LossKind, MlpArch, MlpParams, DEFAULT_SLOPE,
};
