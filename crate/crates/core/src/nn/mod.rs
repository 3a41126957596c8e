//! Small dense networks with hand-written reverse-mode gradients.
//!
//! Only what the agents need: batch-normalized inputs, ELU hidden layers, a
//! linear head, Adam, and the Huber / squared losses. Parameters live in one
//! flat buffer per network so the optimizer, soft target updates and
//! finite-difference checks can treat them uniformly.

mod adam;
pub mod gradcheck;
mod loss;
mod mlp;
mod tensor;

pub use adam::{Adam, AdamConfig, LrDecay};
pub use loss::{huber_loss, mse_loss};
pub use mlp::{elu, elu_grad, BatchNormState, ForwardCache, Mlp, Mode};
pub use tensor::Tensor2;
