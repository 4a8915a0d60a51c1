//! A small reverse-mode differentiation tape over dense `f64` matrices,
//! and the layers the provisioner network is built from.
//!
//! A forward pass records every operation on a [`Graph`]. Parameters live
//! in [`ModelParams`] and are copied onto the tape by [`Graph::param`];
//! [`Graph::backward`] adds their gradients back into the parameter set.

mod graph;
mod layers;
mod params;
mod tensor;

use alloc::string::String;

pub use graph::{bce_term, Gradients, Graph, Var, LAYER_NORM_EPS, PROB_EPS};
pub use layers::{
    param_names, positional_encoding, scaled_dot_attention, EncoderBlock, FeedForward, GraphAttention, LayerNorm,
    Linear, MultiHeadAttention, DEFAULT_SLOPE,
};
pub use params::{ModelParams, Param, ParamId};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{len} values do not fill a {rows}x{cols} tensor")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("{op}: range {start}..{start}+{len} exceeds extent {extent}")]
    Slice {
        op: &'static str,
        start: usize,
        len: usize,
        extent: usize,
    },
    #[error("concatenation of zero tensors")]
    EmptyConcat,
    #[error("loss must be a 1x1 tensor, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("{heads} heads do not divide width {width}")]
    Heads { width: usize, heads: usize },
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("unexpected parameter {0:?}")]
    UnknownParam(String),
    #[error("parameter {0:?} has non-finite values")]
    NonFinite(String),
    #[error("expected {expected} parameters, found {found}")]
    ParamSetMismatch { expected: usize, found: usize },
}
