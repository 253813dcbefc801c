//! Evaluation metrics: FPR at a target TPR, AUROC, ID accuracy, and score
//! histograms.

use crate::detection::calibrate_threshold;
use crate::error::{Error, Result};

/// FPR at the threshold that keeps `tpr` of the ID scores: the fraction of
/// OOD scores at or above that threshold. Reuses the deployment calibration
/// rule so evaluation matches detector behavior.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64> {
    if ood_scores.is_empty() {
        return Err(Error::EmptyInput("ood scores"));
    }
    let tau = calibrate_threshold(id_scores, tpr)?;
    let false_positives = ood_scores.iter().filter(|&&s| s >= tau).count();
    Ok(false_positives as f64 / ood_scores.len() as f64)
}

/// AUROC as the Mann-Whitney statistic:
/// `(#{id > ood} + 0.5 #{id = ood}) / (n_id * n_ood)`.
///
/// Counted exactly with integers (sort + binary search), so the result is
/// bit-identical to brute-force pair enumeration.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() {
        return Err(Error::EmptyInput("id scores"));
    }
    if ood_scores.is_empty() {
        return Err(Error::EmptyInput("ood scores"));
    }
    let mut sorted_ood = ood_scores.to_vec();
    sorted_ood.sort_by(f64::total_cmp);
    let mut greater: u64 = 0;
    let mut ties: u64 = 0;
    for &s in id_scores {
        let below = sorted_ood.partition_point(|&o| o < s);
        let at_or_below = sorted_ood.partition_point(|&o| o <= s);
        greater += below as u64;
        ties += (at_or_below - below) as u64;
    }
    let pairs = (id_scores.len() as u64) * (ood_scores.len() as u64);
    Ok((2 * greater + ties) as f64 / (2 * pairs) as f64)
}

/// Fraction of exact matches between predictions and labels.
pub fn id_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            label: "accuracy labels",
            expected: predictions.len(),
            got: labels.len(),
        });
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// One histogram bin: `[lower, upper)`, closed on the last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

/// Histogram over `n_bins` equal-width bins. Bins are half-open except the
/// last, which is closed so the range maximum is counted. `range = None`
/// spans `[min, max]` of the scores; out-of-range scores are dropped.
pub fn histogram(
    scores: &[f64],
    n_bins: usize,
    range: Option<(f64, f64)>,
) -> Result<Vec<HistogramBin>> {
    if n_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".to_string()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if lo >= hi {
                return Err(Error::BadRange { lo, hi });
            }
            (lo, hi)
        }
        None => {
            if scores.is_empty() {
                (0.0, 0.0)
            } else {
                let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        }
    };
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lower: lo + width * i as f64,
            upper: if i + 1 == n_bins {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            count: 0,
        })
        .collect();
    for &s in scores {
        if s < lo || s > hi {
            continue;
        }
        let idx = if width > 0.0 {
            (((s - lo) / width) as usize).min(n_bins - 1)
        } else {
            // Degenerate auto range (all scores equal): everything lands in
            // the last (closed) bin.
            n_bins - 1
        };
        bins[idx].count += 1;
    }
    Ok(bins)
}

/// Evaluation result for one OOD set.
#[derive(Debug, Clone)]
pub struct OodEval {
    pub name: String,
    pub fpr_at_tpr: f64,
    pub auroc: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Full evaluation report: one row per OOD set plus ID-side context.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub tpr_level: f64,
    pub id_accuracy: Option<f64>,
    pub rows: Vec<OodEval>,
    pub id_histogram: Vec<HistogramBin>,
}

impl EvalReport {
    /// Builds a report from raw scores. Histogram bins span the combined
    /// score range so ID and OOD distributions are directly comparable.
    pub fn from_scores(
        id_scores: &[f64],
        ood_sets: &[(String, Vec<f64>)],
        tpr: f64,
        id_accuracy: Option<f64>,
        n_bins: usize,
    ) -> Result<Self> {
        if id_scores.is_empty() {
            return Err(Error::EmptyInput("id scores"));
        }
        let mut lo = id_scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = id_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (_, scores) in ood_sets {
            for &s in scores {
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
        if lo >= hi {
            // All scores identical; widen so the histogram range is valid.
            hi = lo + 1.0;
        }
        let mut rows = Vec::with_capacity(ood_sets.len());
        for (name, scores) in ood_sets {
            rows.push(OodEval {
                name: name.clone(),
                fpr_at_tpr: fpr_at_tpr(id_scores, scores, tpr)?,
                auroc: auroc(id_scores, scores)?,
                histogram: histogram(scores, n_bins, Some((lo, hi)))?,
            });
        }
        Ok(Self {
            tpr_level: tpr,
            id_accuracy,
            rows,
            id_histogram: histogram(id_scores, n_bins, Some((lo, hi)))?,
        })
    }

    /// CSV table mirroring the familiar benchmark layout
    /// (`dataset,fpr_at_95,auroc`) plus a one-line summary comment.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,fpr_at_tpr,auroc\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.9},{:.9}\n",
                row.name, row.fpr_at_tpr, row.auroc
            ));
        }
        let acc = match self.id_accuracy {
            Some(a) => format!("{a:.9}"),
            None => "NA".to_string(),
        };
        out.push_str(&format!(
            "# summary tpr_level={} id_accuracy={} ood_sets={}\n",
            self.tpr_level,
            acc,
            self.rows.len()
        ));
        out
    }

    /// Histogram CSV (`set,bin_lower,bin_upper,count`), ID rows first.
    pub fn histograms_csv(&self) -> String {
        let mut out = String::from("set,bin_lower,bin_upper,count\n");
        for bin in &self.id_histogram {
            out.push_str(&format!(
                "id,{:.9e},{:.9e},{}\n",
                bin.lower, bin.upper, bin.count
            ));
        }
        for row in &self.rows {
            for bin in &row.histogram {
                out.push_str(&format!(
                    "{},{:.9e},{:.9e},{}\n",
                    row.name, bin.lower, bin.upper, bin.count
                ));
            }
        }
        out
    }
}
