//! Pseudo-label subspace: basis construction and null-space regularization.
//!
//! Stacking the per-pseudo-label generative maps vertically gives a tall
//! basis `W` whose `K`-dimensional column space contains every in-distribution
//! pseudo-label vector. With learnable correction matrices `B_m`, the basis is
//! `W = [B_1^{-T}, ..., B_M^{-T}]^T`, i.e. the vertical stack of the `B_m`
//! inverses. The regularization loss measures how far a stacked probability
//! vector `p` falls outside that column space via the residual projector
//! `I - W (W^T W)^{-1} W^T`.

use crate::error::{Error, Result};
use crate::numerics::{exact_inverse, norm2, Inversion, Matrix};

/// Ridge added to the Gram matrix when its pivot check fails.
const GRAM_RIDGE: f64 = 1e-10;

/// Norm below which a regularized sample counts as degenerate.
const NORM_GUARD: f64 = 1e-12;

/// Batch reduction mode for the regularization loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// The stacked subspace basis `W` with its cached null-space projector.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    w: Matrix,
    gram_inv: Matrix,
    projector_residual: Matrix,
    pseudo_labels: usize,
    classes: usize,
}

impl SubspaceBasis {
    /// Builds the basis directly from an already-stacked `MK x K` matrix.
    ///
    /// Computes and caches `(W^T W)^{-1}` (ridged by `1e-10 I` if the pivot
    /// check fails, with a warning) and the residual projector
    /// `I - W (W^T W)^{-1} W^T`.
    pub fn from_stacked(w: Matrix, pseudo_labels: usize, classes: usize) -> Result<Self> {
        if w.rows() != pseudo_labels * classes || w.cols() != classes {
            return Err(Error::Dimension {
                label: "stacked basis",
                expected: pseudo_labels * classes * classes,
                got: w.rows() * w.cols(),
            });
        }
        let wt = w.transpose();
        let gram = wt.matmul(&w);
        let gram_inv = match exact_inverse(&gram) {
            Ok(inv) => inv,
            Err(Error::SingularMatrix { .. }) => {
                eprintln!("warning: singular Gram matrix, adding ridge {GRAM_RIDGE:e}");
                let mut ridged = gram.clone();
                for i in 0..classes {
                    ridged[(i, i)] += GRAM_RIDGE;
                }
                exact_inverse(&ridged).map_err(|_| Error::DegenerateBasis)?
            }
            Err(err) => return Err(err),
        };
        // Symmetrize: the inverse of a symmetric matrix picks up rounding skew.
        let mut gram_inv = gram_inv;
        for i in 0..classes {
            for j in i + 1..classes {
                let avg = 0.5 * (gram_inv[(i, j)] + gram_inv[(j, i)]);
                gram_inv[(i, j)] = avg;
                gram_inv[(j, i)] = avg;
            }
        }

        let mk = pseudo_labels * classes;
        let hat = w.matmul(&gram_inv).matmul(&wt);
        let mut projector_residual = Matrix::identity(mk);
        projector_residual.add_scaled(&hat, -1.0);

        Ok(Self {
            w,
            gram_inv,
            projector_residual,
            pseudo_labels,
            classes,
        })
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    /// Cached `(W^T W)^{-1}`.
    pub fn gram_inv(&self) -> &Matrix {
        &self.gram_inv
    }

    /// Cached `I - W (W^T W)^{-1} W^T`.
    pub fn projector_residual(&self) -> &Matrix {
        &self.projector_residual
    }

    pub fn pseudo_labels(&self) -> usize {
        self.pseudo_labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Projects `p` onto the null space of `W^T` (the orthogonal complement
    /// of the basis column space).
    pub fn null_projection(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mk = self.pseudo_labels * self.classes;
        if p.len() != mk {
            return Err(Error::Dimension {
                label: "null projection input",
                expected: mk,
                got: p.len(),
            });
        }
        Ok(self.projector_residual.matvec(p))
    }

    /// Per-sample regularization term `||proj_null(p)|| / ||p||`.
    pub fn residual_ratio(&self, p: &[f64]) -> Result<f64> {
        if norm2(p) < NORM_GUARD {
            return Err(Error::DegenerateInput("zero-norm regularization sample"));
        }
        if self.pseudo_labels == 1 {
            // The null space is trivial: the ratio is identically zero.
            let _ = self.null_projection(p)?;
            return Ok(0.0);
        }
        let residual = self.null_projection(p)?;
        Ok(norm2(&residual) / norm2(p))
    }

    /// Regularization loss over a batch of stacked probability vectors.
    pub fn reg_loss(&self, batch: &[Vec<f64>], reduction: Reduction) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("regularization batch"));
        }
        let mut total = 0.0;
        for p in batch {
            total += self.residual_ratio(p)?;
        }
        Ok(match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / batch.len() as f64,
        })
    }
}

/// Builds the subspace basis from the `M` correction matrices.
///
/// Each block of `W` is `B_m^{-1}`; the inversion strategy is either the
/// truncated Neumann series (with exact fallback when the guard rejects a
/// matrix) or Gaussian elimination.
pub fn build_basis(b_list: &[Matrix], inversion: Inversion) -> Result<SubspaceBasis> {
    if b_list.is_empty() {
        return Err(Error::EmptyInput("correction matrices"));
    }
    let classes = b_list[0].rows();
    for b in b_list {
        if !b.is_square() {
            return Err(Error::NotSquare {
                rows: b.rows(),
                cols: b.cols(),
            });
        }
        if b.rows() != classes {
            return Err(Error::Dimension {
                label: "correction matrix",
                expected: classes,
                got: b.rows(),
            });
        }
    }
    let pseudo_labels = b_list.len();
    let mut w = Matrix::zeros(pseudo_labels * classes, classes);
    for (m, b) in b_list.iter().enumerate() {
        let inv = inversion.invert(b)?;
        for i in 0..classes {
            for j in 0..classes {
                w[(m * classes + i, j)] = inv[(i, j)];
            }
        }
    }
    SubspaceBasis::from_stacked(w, pseudo_labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs_diff;
    use crate::rng::SplitMix64;

    fn stacked_identity_basis() -> SubspaceBasis {
        // W = [I; I] for M = 2, K = 2.
        let b = vec![Matrix::identity(2), Matrix::identity(2)];
        build_basis(&b, Inversion::Exact).unwrap()
    }

    #[test]
    fn test_build_basis_identity_blocks() {
        let basis = stacked_identity_basis();
        let expected = Matrix::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(basis.w().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn test_build_basis_single_block_inverse() {
        // W is the inverse of B when M = 1; the null space is trivial.
        let b = Matrix::from_rows(&[&[0.8, 0.4], &[0.2, 0.6]]).unwrap();
        let basis = build_basis(&[b], Inversion::Exact).unwrap();
        let expected = Matrix::from_rows(&[&[1.5, -1.0], &[-0.5, 2.0]]).unwrap();
        assert!(basis.w().max_abs_diff(&expected) < 1e-12);
        assert!(basis.projector_residual().max_abs_diff(&Matrix::zeros(2, 2)) < 1e-12);
    }

    #[test]
    fn test_build_basis_m1_identity() {
        let basis = build_basis(&[Matrix::identity(2)], Inversion::Exact).unwrap();
        assert!(basis.w().max_abs_diff(&Matrix::identity(2)) < 1e-15);
        // Null space contains only the zero vector.
        let q = basis.null_projection(&[0.3, 0.7]).unwrap();
        assert!(norm2(&q) < 1e-12);
    }

    #[test]
    fn test_build_basis_singular_block() {
        let b = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert!(matches!(
            build_basis(&[b], Inversion::Exact),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn test_null_projection_in_range_vector() {
        let basis = stacked_identity_basis();
        // p = W [1, 2]^T lies in the column space.
        let q = basis.null_projection(&[1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(norm2(&q) < 1e-12);
    }

    #[test]
    fn test_null_projection_orthogonal_vector() {
        let basis = stacked_identity_basis();
        let p = [1.0, 0.0, -1.0, 0.0];
        let q = basis.null_projection(&p).unwrap();
        assert!(max_abs_diff(&q, &p) < 1e-12);
    }

    #[test]
    fn test_null_projection_dimension_error() {
        let basis = stacked_identity_basis();
        assert!(matches!(
            basis.null_projection(&[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn test_null_projection_matches_least_squares_residual() {
        // Oracle: residual of the normal-equations solve, implemented
        // independently of the projector path.
        let mut rng = SplitMix64::new(31);
        for _ in 0..50 {
            let (m, k) = (3, 2);
            let mut w = Matrix::zeros(m * k, k);
            for i in 0..m * k {
                for j in 0..k {
                    w[(i, j)] = rng.uniform(-1.0, 1.0);
                }
            }
            let p: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let basis = match SubspaceBasis::from_stacked(w.clone(), m, k) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let expected = least_squares_residual(&w, &p);
            let got = basis.null_projection(&p).unwrap();
            assert!(max_abs_diff(&got, &expected) < 1e-8);
        }
    }

    #[test]
    fn test_projector_invariants() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..20 {
            let m = 2 + rng.next_below(3);
            let k = 2 + rng.next_below(3);
            let b_list: Vec<Matrix> = (0..m)
                .map(|_| {
                    let mut b = Matrix::identity(k);
                    for i in 0..k {
                        for j in 0..k {
                            b[(i, j)] += rng.uniform(-0.3, 0.3) / k as f64;
                        }
                    }
                    b
                })
                .collect();
            let basis = build_basis(&b_list, Inversion::Exact).unwrap();
            let r = basis.projector_residual();

            // Symmetric and idempotent.
            assert!(r.max_abs_diff(&r.transpose()) < 1e-8);
            assert!(r.matmul(r).max_abs_diff(r) < 1e-8);
            // Annihilates the basis columns.
            assert!(r.matmul(basis.w()).max_abs() < 1e-8);

            let p: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let q = basis.null_projection(&p).unwrap();
            // Idempotency on vectors.
            let qq = basis.null_projection(&q).unwrap();
            assert!(max_abs_diff(&q, &qq) < 1e-8);
            // Orthogonality: W^T q = 0.
            let wtq = basis.w().matvec_t(&q);
            assert!(wtq.iter().all(|x| x.abs() < 1e-8));
            // Annihilation of in-range vectors.
            let c: Vec<f64> = (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let wc = basis.w().matvec(&c);
            let qwc = basis.null_projection(&wc).unwrap();
            assert!(norm2(&qwc) < 1e-8);
            // Pythagoras.
            let diff: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a - b).collect();
            let lhs = norm2(&p).powi(2);
            let rhs = norm2(&q).powi(2) + norm2(&diff).powi(2);
            assert!((lhs - rhs).abs() < 1e-8);
        }
    }

    #[test]
    fn test_reg_loss_in_range_sample() {
        let basis = stacked_identity_basis();
        let loss = basis
            .reg_loss(&[vec![1.0, 2.0, 1.0, 2.0]], Reduction::Mean)
            .unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn test_reg_loss_orthogonal_sample() {
        let basis = stacked_identity_basis();
        let loss = basis
            .reg_loss(&[vec![1.0, 0.0, -1.0, 0.0]], Reduction::Mean)
            .unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_reg_loss_mean_of_mixed_batch() {
        let basis = stacked_identity_basis();
        let batch = vec![vec![1.0, 2.0, 1.0, 2.0], vec![1.0, 0.0, -1.0, 0.0]];
        let mean = basis.reg_loss(&batch, Reduction::Mean).unwrap();
        assert!((mean - 0.5).abs() < 1e-12);
        let sum = basis.reg_loss(&batch, Reduction::Sum).unwrap();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_reg_loss_errors() {
        let basis = stacked_identity_basis();
        assert!(matches!(
            basis.reg_loss(&[], Reduction::Mean),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            basis.reg_loss(&[vec![0.0; 4]], Reduction::Mean),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn test_reg_loss_zero_iff_in_range() {
        let mut rng = SplitMix64::new(5150);
        let basis = stacked_identity_basis();
        for _ in 0..20 {
            let c = [rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)];
            let in_range = basis.w().matvec(&c);
            let term = basis.residual_ratio(&in_range).unwrap();
            assert!(term < 1e-8);

            let mut off = in_range.clone();
            off[0] += 0.5;
            off[2] -= 0.5;
            let term = basis.residual_ratio(&off).unwrap();
            assert!(term > 1e-8);
        }
    }

    #[test]
    fn test_reg_loss_m1_identically_zero() {
        let mut rng = SplitMix64::new(9);
        let mut b = Matrix::identity(3);
        for i in 0..3 {
            for j in 0..3 {
                b[(i, j)] += rng.uniform(-0.2, 0.2);
            }
        }
        let basis = build_basis(&[b], Inversion::Exact).unwrap();
        for _ in 0..10 {
            let p: Vec<f64> = (0..3).map(|_| rng.uniform(0.1, 1.0)).collect();
            assert_eq!(basis.residual_ratio(&p).unwrap(), 0.0);
        }
    }

    #[test]
    fn test_reg_loss_terms_bounded() {
        let mut rng = SplitMix64::new(404);
        let basis = stacked_identity_basis();
        for _ in 0..50 {
            let p: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
            if norm2(&p) < 1e-6 {
                continue;
            }
            let term = basis.residual_ratio(&p).unwrap();
            assert!((-1e-12..=1.0 + 1e-12).contains(&term), "term {term}");
        }
    }

    /// Independent oracle: solve the normal equations with a local Gaussian
    /// solver and return `p - W c`.
    #[allow(clippy::needless_range_loop)]
    fn least_squares_residual(w: &Matrix, p: &[f64]) -> Vec<f64> {
        let k = w.cols();
        let gram = w.transpose().matmul(w);
        let rhs = w.matvec_t(p);
        // Solve gram * c = rhs by elimination (no reuse of exact_inverse).
        let mut a: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut row: Vec<f64> = (0..k).map(|j| gram[(i, j)]).collect();
                row.push(rhs[i]);
                row
            })
            .collect();
        for col in 0..k {
            let pivot_row = (col..k)
                .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
                .unwrap();
            a.swap(col, pivot_row);
            let pivot = a[col][col];
            for j in col..=k {
                a[col][j] /= pivot;
            }
            for r in 0..k {
                if r != col {
                    let f = a[r][col];
                    for j in col..=k {
                        a[r][j] -= f * a[col][j];
                    }
                }
            }
        }
        let c: Vec<f64> = (0..k).map(|i| a[i][k]).collect();
        let wc = w.matvec(&c);
        p.iter().zip(&wc).map(|(x, y)| x - y).collect()
    }
}
