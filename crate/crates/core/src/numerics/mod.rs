//! Dense tensors, a reverse-mode tape and the differentiable primitives the
//! rest of the crate composes.
//!
//! All values are `f64`. Operations are recorded on a [`Graph`]; each returns
//! a [`Var`] handle and checks that its output is finite.

mod gemm;
mod gradcheck;
mod graph;
mod ops;
mod sampling;
mod spatial;
mod tensor;

#[cfg(test)]
mod tests;

pub use gradcheck::{finite_difference_check, FdOptions, FdReport};
pub use graph::{BackCtx, Graph, Var};
pub(crate) use sampling::Bilinear;
pub use tensor::{Tensor, ValidityMask};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
