//! Minimal reverse-mode automatic differentiation over dense 2-D `f64` arrays.
//!
//! The op set is exactly what the grasp networks need: elementwise
//! arithmetic, matrix products, concatenation, row gathers and masks, ReLU and
//! GELU, masked softmax, layer normalization, reductions, grouped max-pooling
//! and a Chamfer loss. [`gradcheck`] verifies any composition against central
//! finite differences and [`Adam`] updates a [`ParamStore`] in place.

mod adam;
mod array;
pub mod fuzz;
mod gradcheck;
mod graph;
mod params;

pub use adam::{Adam, AdamState};
pub use array::Array;
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use params::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("ShapeMismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("NotAScalarLoss: output is {rows}x{cols}; pass an explicit cotangent")]
    NotAScalarLoss { rows: usize, cols: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
