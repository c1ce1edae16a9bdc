//! Small dense feedforward network engine: forward, backprop, SGD with momentum,
//! dropout and a finite-difference gradient oracle.

mod checkpoint;
pub mod gradcheck;
mod matrix;
mod net;
mod optim;

pub use checkpoint::{NetCheckpoint, OptimizerState, NET_FORMAT_VERSION};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use matrix::Matrix;
pub use net::{one_hot, softmax_in_place, Activations, DenseNet, DenseNetSpec, Gradients, Loss, OutputHead};
pub use optim::SgdMomentum;
