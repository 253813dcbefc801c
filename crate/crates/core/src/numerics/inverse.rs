//! Matrix inversion: truncated Neumann series and exact Gaussian elimination.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Pivot magnitude below which elimination treats a matrix as singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-12;

/// Inversion strategy for the learnable confusion matrices.
///
/// `Neumann(t)` evaluates the truncated series `sum_{i=0..=t} (I - B)^i`,
/// which converges when the induced 1-norm of `I - B` is below one. Callers
/// that must always produce an inverse (the training path) fall back to
/// [`exact_inverse`] when the guard rejects a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inversion {
    Neumann(usize),
    Exact,
}

/// Default Neumann truncation order.
pub const DEFAULT_NEUMANN_ORDER: usize = 16;

impl Inversion {
    /// Inverts `b`, falling back to the exact inverse when the Neumann
    /// guard rejects it.
    pub fn invert(&self, b: &Matrix) -> Result<Matrix> {
        match *self {
            Inversion::Exact => exact_inverse(b),
            Inversion::Neumann(order) => match neumann_inverse(b, order) {
                Ok(inv) => Ok(inv),
                Err(Error::NeumannGuard { .. }) => exact_inverse(b),
                Err(err) => Err(err),
            },
        }
    }
}

impl std::fmt::Display for Inversion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Inversion::Neumann(t) => write!(f, "neumann:{t}"),
            Inversion::Exact => write!(f, "exact"),
        }
    }
}

/// Induced 1-norm (max column absolute sum) of `I - B`.
pub fn neumann_guard_norm(b: &Matrix) -> f64 {
    let k = b.rows();
    let mut worst = 0.0f64;
    for j in 0..k {
        let mut col = 0.0;
        for i in 0..k {
            let e = if i == j { 1.0 - b[(i, j)] } else { -b[(i, j)] };
            col += e.abs();
        }
        worst = worst.max(col);
    }
    worst
}

/// Truncated Neumann series `sum_{t=0..=order} (I - B)^t`.
///
/// Rejects matrices whose guard norm `||I - B||_1 >= 1` (a conservative
/// sufficient condition for convergence); the caller must then fall back to
/// [`exact_inverse`].
pub fn neumann_inverse(b: &Matrix, order: usize) -> Result<Matrix> {
    Ok(neumann_partial_sums(b, order)?.pop().expect("non-empty"))
}

/// All partial sums `S_0 = I, S_j = I + (I - B) S_{j-1}` up to `S_order`.
///
/// The final element equals [`neumann_inverse`]; the intermediate sums are
/// what reverse-mode differentiation of the truncated series needs.
pub fn neumann_partial_sums(b: &Matrix, order: usize) -> Result<Vec<Matrix>> {
    if !b.is_square() {
        return Err(Error::NotSquare {
            rows: b.rows(),
            cols: b.cols(),
        });
    }
    let norm = neumann_guard_norm(b);
    if norm >= 1.0 {
        return Err(Error::NeumannGuard { norm });
    }
    let k = b.rows();
    let mut residual = Matrix::identity(k); // I - B
    residual.add_scaled(b, -1.0);

    let mut sums = Vec::with_capacity(order + 1);
    let mut current = Matrix::identity(k);
    sums.push(current.clone());
    for _ in 0..order {
        // Horner step: S_j = I + (I - B) S_{j-1}
        let mut next = residual.matmul(&current);
        for i in 0..k {
            next[(i, i)] += 1.0;
        }
        sums.push(next.clone());
        current = next;
    }
    Ok(sums)
}

/// Exact inverse by Gauss-Jordan elimination with partial pivoting.
pub fn exact_inverse(b: &Matrix) -> Result<Matrix> {
    if !b.is_square() {
        return Err(Error::NotSquare {
            rows: b.rows(),
            cols: b.cols(),
        });
    }
    let n = b.rows();
    let mut a = b.clone();
    let mut inv = Matrix::identity(n);

    for col in 0..n {
        // Partial pivoting: largest |entry| on or below the diagonal.
        let mut pivot_row = col;
        let mut pivot_val = a[(col, col)].abs();
        for r in col + 1..n {
            if a[(r, col)].abs() > pivot_val {
                pivot_val = a[(r, col)].abs();
                pivot_row = r;
            }
        }
        if pivot_val < SINGULAR_PIVOT_TOL {
            return Err(Error::SingularMatrix { pivot: pivot_val });
        }
        if pivot_row != col {
            swap_rows(&mut a, pivot_row, col);
            swap_rows(&mut inv, pivot_row, col);
        }
        let pivot = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= pivot;
            inv[(col, j)] /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[(r, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                let ac = a[(col, j)];
                let ic = inv[(col, j)];
                a[(r, j)] -= factor * ac;
                inv[(r, j)] -= factor * ic;
            }
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut Matrix, r1: usize, r2: usize) {
    if r1 == r2 {
        return;
    }
    for j in 0..m.cols() {
        let tmp = m[(r1, j)];
        m[(r1, j)] = m[(r2, j)];
        m[(r2, j)] = tmp;
    }
}
