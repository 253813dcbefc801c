//! Loss evaluation: cross entropy, regularization, and the cached forward
//! pass shared by loss reporting and backpropagation.

use crate::error::{Error, Result};
use crate::model::PrismModel;
use crate::numerics::{exact_inverse, neumann_partial_sums, norm2, Inversion, Matrix, ProbVector};
use crate::subspace::SubspaceBasis;
use crate::training::TrainConfig;

/// Probabilities are clamped at this floor inside `log` so degenerate
/// batches cannot produce infinite losses.
pub const PROB_CLAMP: f64 = 1e-12;

/// Mean cross entropy of the true-class probabilities.
pub fn ce_loss(f_hat_batch: &[ProbVector], labels: &[usize]) -> Result<f64> {
    if f_hat_batch.is_empty() {
        return Err(Error::EmptyInput("cross-entropy batch"));
    }
    if f_hat_batch.len() != labels.len() {
        return Err(Error::Dimension {
            label: "cross-entropy labels",
            expected: f_hat_batch.len(),
            got: labels.len(),
        });
    }
    let mut total = 0.0;
    for (f_hat, &label) in f_hat_batch.iter().zip(labels) {
        if label >= f_hat.len() {
            return Err(Error::LabelOutOfRange {
                label: label as i64,
                classes: f_hat.len(),
            });
        }
        total += ce_term(f_hat.as_slice(), label);
    }
    Ok(total / f_hat_batch.len() as f64)
}

/// Single-sample cross-entropy term with the probability clamp.
pub(crate) fn ce_term(f_hat: &[f64], label: usize) -> f64 {
    -f_hat[label].max(PROB_CLAMP).ln()
}

/// How the correction matrices were inverted, with the intermediates that
/// reverse-mode differentiation of that path needs.
pub(crate) enum InversionTrace {
    Exact {
        inverse: Matrix,
    },
    Neumann {
        /// Partial sums `S_0 ... S_T` of the truncated series.
        partials: Vec<Matrix>,
        /// `I - B`.
        residual: Matrix,
    },
}

/// Batch-level context: correction matrices and (for `M > 1`) the subspace
/// basis with inversion traces.
pub(crate) struct BatchContext {
    pub b_mats: Vec<Matrix>,
    pub basis: Option<SubspaceBasis>,
    pub traces: Vec<InversionTrace>,
}

impl BatchContext {
    pub fn build(model: &PrismModel, inversion: Inversion) -> Result<Self> {
        let b_mats = model.confusion_matrices()?;
        let m = b_mats.len();
        let k = model.dims().classes;
        if m == 1 {
            // Trivial null space: the regularization term is identically zero
            // and no basis is needed.
            return Ok(Self {
                b_mats,
                basis: None,
                traces: Vec::new(),
            });
        }
        let mut traces = Vec::with_capacity(m);
        let mut w = Matrix::zeros(m * k, k);
        for (idx, b) in b_mats.iter().enumerate() {
            let trace = match inversion {
                Inversion::Exact => InversionTrace::Exact {
                    inverse: exact_inverse(b)?,
                },
                Inversion::Neumann(order) => match neumann_partial_sums(b, order) {
                    Ok(partials) => {
                        let mut residual = Matrix::identity(k);
                        residual.add_scaled(b, -1.0);
                        InversionTrace::Neumann { partials, residual }
                    }
                    // Guard rejected this matrix: exact inverse instead.
                    Err(Error::NeumannGuard { .. }) => InversionTrace::Exact {
                        inverse: exact_inverse(b)?,
                    },
                    Err(err) => return Err(err),
                },
            };
            let inv = match &trace {
                InversionTrace::Exact { inverse } => inverse.clone(),
                InversionTrace::Neumann { partials, .. } => {
                    partials.last().expect("non-empty partials").clone()
                }
            };
            for i in 0..k {
                for j in 0..k {
                    w[(idx * k + i, j)] = inv[(i, j)];
                }
            }
            traces.push(trace);
        }
        let basis = SubspaceBasis::from_stacked(w, m, k)?;
        Ok(Self {
            b_mats,
            basis: Some(basis),
            traces,
        })
    }
}

/// Forward-pass intermediates for one sample, kept for backpropagation.
pub(crate) struct SampleCache {
    /// Input to each encoder layer (`layer_inputs[0]` is the sample itself;
    /// later entries are post-ReLU activations).
    pub layer_inputs: Vec<Vec<f64>>,
    /// Penultimate features (output of the final, linear encoder layer).
    pub h: Vec<f64>,
    /// Concatenated pseudo-label probability blocks.
    pub p: Vec<f64>,
    /// `B_m p_m` per pseudo label.
    pub bp: Vec<Vec<f64>>,
    /// Mixture weights used for this sample.
    pub d: Vec<f64>,
    /// Class posterior estimate.
    pub f_hat: Vec<f64>,
    pub label: usize,
    /// Null-space residual `R p` (empty when the basis is trivial).
    pub q: Vec<f64>,
    pub p_norm: f64,
    pub q_norm: f64,
    /// Per-sample regularization term.
    pub reg: f64,
}

pub(crate) struct BatchForward {
    pub caches: Vec<SampleCache>,
    pub ce: f64,
    pub reg: f64,
}

/// Runs the forward pass over a batch, recording everything backpropagation
/// needs. `ce` and `reg` are batch means.
pub(crate) fn forward_batch(
    model: &PrismModel,
    ctx: &BatchContext,
    xs: &[&[f64]],
    labels: &[usize],
) -> Result<BatchForward> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    if xs.len() != labels.len() {
        return Err(Error::Dimension {
            label: "batch labels",
            expected: xs.len(),
            got: labels.len(),
        });
    }
    let dims = model.dims();
    let k = dims.classes;
    let mut caches = Vec::with_capacity(xs.len());
    let mut ce_sum = 0.0;
    let mut reg_sum = 0.0;

    for (&x, &label) in xs.iter().zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                label: label as i64,
                classes: k,
            });
        }
        // Encoder, keeping layer inputs for the backward pass.
        if x.len() != dims.input {
            return Err(Error::Dimension {
                label: "encoder input",
                expected: dims.input,
                got: x.len(),
            });
        }
        let last = model.encoder.len() - 1;
        let mut layer_inputs = Vec::with_capacity(model.encoder.len());
        let mut activ = x.to_vec();
        for (idx, layer) in model.encoder.iter().enumerate() {
            layer_inputs.push(activ.clone());
            activ = layer.forward(&activ);
            if idx != last {
                for a in activ.iter_mut() {
                    if *a < 0.0 {
                        *a = 0.0;
                    }
                }
            }
        }
        let h = activ;

        let t = model.head.forward(&h);
        let p = model.pseudo_label_probs(&t)?;
        let d = model.mixture_weights(Some(&h))?;

        let mut f_hat = vec![0.0; k];
        let mut bp = Vec::with_capacity(ctx.b_mats.len());
        for (m, b) in ctx.b_mats.iter().enumerate() {
            let block = &p[m * k..(m + 1) * k];
            let bpm = b.matvec(block);
            for (f, v) in f_hat.iter_mut().zip(&bpm) {
                *f += d[m] * v;
            }
            bp.push(bpm);
        }
        ce_sum += ce_term(&f_hat, label);

        let (q, p_norm, q_norm, reg) = match &ctx.basis {
            Some(basis) => {
                let p_norm = norm2(&p);
                if p_norm < 1e-12 {
                    return Err(Error::DegenerateInput("zero-norm pseudo-label vector"));
                }
                let q = basis.null_projection(&p)?;
                let q_norm = norm2(&q);
                (q, p_norm, q_norm, q_norm / p_norm)
            }
            None => (Vec::new(), norm2(&p), 0.0, 0.0),
        };
        reg_sum += reg;

        caches.push(SampleCache {
            layer_inputs,
            h,
            p,
            bp,
            d,
            f_hat,
            label,
            q,
            p_norm,
            q_norm,
            reg,
        });
    }

    let n = xs.len() as f64;
    Ok(BatchForward {
        caches,
        ce: ce_sum / n,
        reg: reg_sum / n,
    })
}

/// Evaluates the full objective on a batch: `(total, ce, reg)` where
/// `total = ce + lambda * reg`. Both loss components are batch means; the
/// regularization term is identically zero when `M = 1`.
pub fn total_loss(
    model: &PrismModel,
    xs: &[&[f64]],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    let ctx = BatchContext::build(model, config.inversion)?;
    let fwd = forward_batch(model, &ctx, xs, labels)?;
    Ok((fwd.ce + config.lambda * fwd.reg, fwd.ce, fwd.reg))
}
