//! Dense numeric kernels: tensors, a tanh MLP with hand-written
//! backpropagation, AdamW and a finite-difference gradient checker.
//!
//! All arithmetic is `f64` with a fixed evaluation order, so identical inputs
//! give bit-identical outputs and a row's result never depends on its batch.

mod adamw;
mod gradcheck;
mod mlp;
mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use gradcheck::{compare_gradients, gradient_check, squared_error, DEFAULT_STEP};
pub use mlp::{parameter_count, MlpNetwork};
pub use tensor::Tensor;
