//! Dense neural-network substrate: tensors, layers with hand-written
//! reverse-mode gradients, Adam, and a finite-difference gradient checker.

mod gradcheck;
mod layers;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, RELATIVE_FLOOR};
pub use layers::{
    bce_with_logits, sigmoid, Activation, CrossLayer, Embedding, Linear, Mlp, MlpTrace, Param, Parameterized,
};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tensor::Tensor;
