//! Dense numeric kernels: matrices, parameter vectors, differentiable
//! losses, first- and second-order gradients, and the two optimizers used
//! by the federation and the reconstruction attacks.
//!
//! Everything operates on 64-bit floats. All operations are pure and
//! reentrant; values move freely between threads.

mod grad;
mod gradmatch;
mod loss;
mod matrix;
mod optim;
mod params;
mod tape;

pub use grad::{
    backprop, ce_output_delta, forward_cache, forward_probs, grad_from_dprobs, grad_inputs,
    grad_params, softmax_backward, ForwardCache,
};
pub use gradmatch::{
    grad_of_gradmatch, grad_of_label_match, gradmatch_value, label_match_value, GradDistance,
    GradMatchResult, LabelMatchResult, COSINE_CLAMP,
};
pub use loss::{cross_entropy, softmax, Labels, LOG_CLAMP};
pub use matrix::Matrix;
pub use optim::{adam_step, sgd_momentum_step, sgd_momentum_step_flat, OptKind, OptState};
pub use params::{LayerShape, ParamVec};

#[derive(Debug, thiserror::Error)]
pub enum DiffMathError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("unsupported capability: {0}")]
    Capability(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}
