//! Minimal dense network with exact gradients, distillation losses and SGD.

pub mod checkpoint;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod optim;

pub use loss::{ce_loss_grad, kd_loss_grad, kd_loss_grad_over, KdKind, LossConfig};
pub use matrix::{cosine, Matrix};
pub use model::{Activation, Dense, Forward, Gradients, Model};
pub use optim::{OptimizerConfig, Sgd};
