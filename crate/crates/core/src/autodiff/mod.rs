//! Minimal reverse-mode differentiation: tensors, a recording tape, and Adam.

mod adam;
pub mod check;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;
