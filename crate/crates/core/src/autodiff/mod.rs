//! Minimal reverse-mode differentiation over dense `f64` tensors, with Adam
//! and finite-difference gradient checking.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, BlockCheck, GradCheckReport};
pub use graph::{Gradients, Graph, Segments, Var};
pub use tensor::Tensor;
