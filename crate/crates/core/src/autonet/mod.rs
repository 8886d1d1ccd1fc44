//! Dense networks, a reverse-mode tape, and first-order optimizers.

mod checkpoint;
mod gradcheck;
mod network;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{autodiff_gradients, finite_difference_gradients, grad_check, max_relative_error, LossFn};
pub use network::{Activation, Layer, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
