//! Probability vectors and softmax parameterizations.
//!
//! Simplex constraints on the learnable confusion matrices and mixture
//! weights are enforced by softmax reparameterization of unconstrained
//! logits, which keeps the optimization problem unconstrained.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Tolerance on the simplex sum invariant.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    /// Validates the simplex invariants and wraps the vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("probability vector"));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                label: "probability vector",
            });
        }
        // Allow rounding-level negatives from float recombination.
        if values.iter().any(|&x| x < -1e-12) {
            return Err(Error::Simplex("negative entry"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::Simplex("entries do not sum to 1"));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Numerically stabilized softmax (subtracts the max before exponentiation).
pub fn softmax(v: &[f64]) -> Result<ProbVector> {
    Ok(ProbVector {
        values: softmax_unchecked(v)?,
    })
}

/// Softmax returning a bare `Vec`. Output is a valid simplex point by
/// construction; entries are strictly positive.
pub(crate) fn softmax_unchecked(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { label: "softmax input" });
    }
    let max = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / sum).collect())
}

/// Applies softmax independently to each of the `m` blocks of size `k`.
///
/// The input is the projection-head output of length `m * k`; each block
/// becomes one pseudo-label probability vector.
pub fn blockwise_softmax(v: &[f64], m: usize, k: usize) -> Result<Vec<f64>> {
    if v.len() != m * k {
        return Err(Error::Dimension {
            label: "blockwise softmax",
            expected: m * k,
            got: v.len(),
        });
    }
    let mut out = Vec::with_capacity(v.len());
    for block in v.chunks_exact(k) {
        out.extend(softmax_unchecked(block)?);
    }
    Ok(out)
}

/// Maps a square logit matrix to a column-stochastic matrix by applying
/// softmax to each column: `1^T B = 1^T`, `B > 0`.
pub fn column_stochastic_from_logits(theta: &Matrix) -> Result<Matrix> {
    if !theta.is_square() {
        return Err(Error::NotSquare {
            rows: theta.rows(),
            cols: theta.cols(),
        });
    }
    let k = theta.rows();
    let mut out = Matrix::zeros(k, k);
    let mut col = vec![0.0; k];
    for j in 0..k {
        for i in 0..k {
            col[i] = theta[(i, j)];
        }
        let soft = softmax_unchecked(&col)?;
        for i in 0..k {
            out[(i, j)] = soft[i];
        }
    }
    Ok(out)
}
