//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] walks the
//! record in reverse and accumulates adjoints into per-node gradients. The
//! operation set is exactly what the network and its loss need: matrix
//! multiplication (plain and transposed-right), addition, row-broadcast bias
//! addition, subtraction, elementwise multiplication, sigmoid, tanh,
//! logarithm, mean reduction, and row/column concatenation and slicing.
//!
//! Everything is `f64`: the extreme-value penalties downstream amplify
//! rounding, so no lower precision is used anywhere. There is no
//! broadcasting beyond adding a bias row to every matrix row; all other
//! shape pairs must match exactly, which keeps silent shape bugs out.

mod check;
mod tape;
mod tensor;

pub use check::grad_check;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must be 1x1, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("variable belongs to a different tape")]
    ForeignVariable,
    #[error("{op}: range {start}..{} exceeds extent {extent}", start + len)]
    BadSlice { op: &'static str, start: usize, len: usize, extent: usize },
    #[error("concat requires at least one input")]
    EmptyConcat,
    #[error("data length {len} does not fill a {rows}x{cols} tensor")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("finite-difference step must be positive and finite, got {0}")]
    BadStep(f64),
}
