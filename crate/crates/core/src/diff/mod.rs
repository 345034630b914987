//! Differentiable computation: tensors, a reverse-mode tape with the layer
//! primitives the networks need, and Adam.

mod adam;
mod layers;
pub mod kernels;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use layers::{bilstm, lstm_cell, lstm_sequence, BiLstmOutput, LstmWeights};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{softmax, Activation, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label {0} out of range for {1} classes")]
    Label(usize, usize),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("tape node {0} references a later node")]
    CyclicTape(usize),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("non-finite gradient for {0}; update aborted")]
    NonFiniteGradient(String),
}
