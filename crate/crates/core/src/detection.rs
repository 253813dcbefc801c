//! kNN-based OOD scoring on l2-normalized penultimate features.
//!
//! The score of a test point is the negative Euclidean distance from its
//! normalized embedding to the k-th nearest normalized training embedding;
//! the threshold is calibrated so a target fraction of ID data scores at or
//! above it.

use crate::error::{Error, Result};
use crate::numerics::{norm2, Matrix};

/// Features with norm below this are rejected as degenerate.
const FEATURE_NORM_GUARD: f64 = 1e-12;

/// Immutable store of l2-normalized training embeddings.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    embeddings: Matrix,
}

impl KnnIndex {
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Normalized embedding of training sample `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }
}

/// Normalizes every feature vector to unit norm and freezes them into an
/// index. Order is preserved; zero-norm features are rejected.
pub fn build_index(features: &[Vec<f64>]) -> Result<KnnIndex> {
    if features.is_empty() {
        return Err(Error::EmptyInput("knn index features"));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::EmptyInput("knn feature dimension"));
    }
    let mut embeddings = Matrix::zeros(features.len(), dim);
    for (i, feature) in features.iter().enumerate() {
        if feature.len() != dim {
            return Err(Error::Dimension {
                label: "knn feature",
                expected: dim,
                got: feature.len(),
            });
        }
        let norm = norm2(feature);
        if norm < FEATURE_NORM_GUARD {
            return Err(Error::DegenerateInput("zero-norm feature"));
        }
        for (j, &v) in feature.iter().enumerate() {
            embeddings[(i, j)] = v / norm;
        }
    }
    Ok(KnnIndex { embeddings })
}

/// Detection score `s = -||u* - u_k||` where `u_k` is the k-th nearest
/// normalized training embedding (`k = 1` is the nearest).
///
/// Exact brute-force search; distances are compared on squared values with
/// ties broken by the lower training-sample index, and the square root is
/// taken once at the end.
pub fn knn_score(index: &KnnIndex, h_test: &[f64], k: usize) -> Result<f64> {
    if k < 1 || k > index.len() {
        return Err(Error::KOutOfRange {
            k,
            n: index.len(),
        });
    }
    if h_test.len() != index.dim() {
        return Err(Error::Dimension {
            label: "knn query",
            expected: index.dim(),
            got: h_test.len(),
        });
    }
    let norm = norm2(h_test);
    if norm < FEATURE_NORM_GUARD {
        return Err(Error::DegenerateInput("zero-norm query feature"));
    }
    let query: Vec<f64> = h_test.iter().map(|v| v / norm).collect();

    let mut dist_sq: Vec<(f64, usize)> = (0..index.len())
        .map(|i| {
            let row = index.row(i);
            let d = row
                .iter()
                .zip(&query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            (d, i)
        })
        .collect();
    // k-th smallest by (distance, index); selection instead of a full sort.
    let kth = k - 1;
    dist_sq.select_nth_unstable_by(kth, |a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    });
    Ok(-dist_sq[kth].0.sqrt())
}

/// ID/OOD decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Id,
    Ood,
}

/// The decision function: ID iff `s >= tau` (the boundary counts as ID).
pub fn detect(s: f64, tau: f64) -> Detection {
    if s >= tau {
        Detection::Id
    } else {
        Detection::Ood
    }
}

/// Threshold calibration: the `ceil(tpr * n)`-th largest ID score, so that
/// at least that many ID samples satisfy `s >= tau`.
pub fn calibrate_threshold(id_scores: &[f64], tpr: f64) -> Result<f64> {
    if id_scores.is_empty() {
        return Err(Error::EmptyInput("calibration scores"));
    }
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::RateOutOfRange {
            label: "tpr",
            value: tpr,
        });
    }
    let n = id_scores.len();
    // Guard against float excess in tpr * n (e.g. 0.95 * 20 = 19.000...004).
    let rank = ((tpr * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let rank = rank.min(n);
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a)); // descending
    Ok(sorted[rank - 1])
}

/// A calibrated detector.
#[derive(Debug, Clone)]
pub struct Detector {
    pub index: KnnIndex,
    pub k: usize,
    pub tau: f64,
}

impl Detector {
    /// Builds a detector from training features and calibrates its threshold
    /// on the same features' scores.
    pub fn new(index: KnnIndex, k: usize, tau: f64) -> Result<Self> {
        if k < 1 || k > index.len() {
            return Err(Error::KOutOfRange { k, n: index.len() });
        }
        if !tau.is_finite() {
            return Err(Error::NonFinite { label: "tau" });
        }
        Ok(Self { index, k, tau })
    }

    pub fn score(&self, h: &[f64]) -> Result<f64> {
        knn_score(&self.index, h, self.k)
    }

    pub fn classify(&self, h: &[f64]) -> Result<Detection> {
        Ok(detect(self.score(h)?, self.tau))
    }
}
