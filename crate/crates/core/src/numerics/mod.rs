//! Dense vector/matrix primitives, simplex parameterizations, and matrix
//! inversion used by every other module.
//!
//! Everything here is pure 64-bit floating point over immutable inputs and
//! safe to call concurrently.

mod inverse;
mod matrix;
mod simplex;

pub use inverse::{
    exact_inverse, neumann_guard_norm, neumann_inverse, neumann_partial_sums, Inversion,
    DEFAULT_NEUMANN_ORDER, SINGULAR_PIVOT_TOL,
};
pub use matrix::{dot, max_abs_diff, norm2, Matrix};
pub use simplex::{
    blockwise_softmax, column_stochastic_from_logits, softmax, ProbVector, SIMPLEX_SUM_TOL,
};

pub(crate) use simplex::softmax_unchecked;
