//! Dense `f64` tensors, a reverse-mode tape and the Adam optimiser.

mod adam;
pub mod gradcheck;
mod linalg;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{softmax_rows, Axis, Tape, Var};
pub use tensor::Tensor;

/// Floor applied to probabilities before taking logarithms in CE and KL.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("window width {width} invalid for sequence length {len}")]
    Window { width: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("label {label} outside 0..{classes}")]
    Label { label: usize, classes: usize },
    #[error("{labels} labels for {rows} rows")]
    LabelCount { rows: usize, labels: usize },
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("expected {expected} parameters, found {found}")]
    ParameterCount { expected: usize, found: usize },
}

#[cfg(test)]
mod tests;
