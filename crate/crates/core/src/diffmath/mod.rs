//! Minimal reverse-mode differentiation over dense arrays.
//!
//! A [`Graph`] is built once with a [`GraphBuilder`] and is immutable
//! afterwards; [`Graph::evaluate`] and [`Graph::gradient`] interpret it in
//! node order without any fusion. Kinked primitives use one-sided
//! derivatives: `relu` and the lower clamp bound take the right derivative,
//! the upper clamp bound the left one, so the derivative is 1 at both kinks.

mod check;
mod exec;
mod graph;
mod kernels;
mod sparse;
mod tensor;

use thiserror::Error;

pub use check::{
    check_primitive, finite_diff_check, finite_diff_check_at, primitive_cases, probes_cross_kink,
    relative_error, PrimitiveCase,
};
pub use exec::Bindings;
pub use graph::{Graph, GraphBuilder, Node, NodeId, Op, SampleGrid, UnaryFn};
pub use sparse::CsrMatrix;
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("input `{name}` expects shape {expected:?}, got {got:?}")]
    InputShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("input `{0}` is not bound")]
    MissingInput(String),
    #[error("`{0}` is not an input of the graph")]
    UnknownInput(String),
    #[error("`{0}` is not an output of the graph")]
    UnknownOutput(String),
    #[error("output `{output}` has shape {shape:?}, expected a scalar")]
    NotScalar { output: String, shape: Vec<usize> },
    #[error("non-finite value produced at node {node}")]
    NonFinite { node: String },
}

#[cfg(test)]
mod tests;
