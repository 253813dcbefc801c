//! Reverse-mode differentiation of the training objective.
//!
//! The gradient of `ce + lambda * reg` is assembled by hand, stage by stage:
//! recombination, mixture softmax, null-space projector (including the basis
//! dependence on the correction matrices through the chosen inversion path),
//! blockwise softmax, projection head, and encoder. Every vector-Jacobian
//! product here is validated against central finite differences by
//! `grad_check`.

// Index loops below mirror the matrix formulas they implement.
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::model::PrismModel;
use crate::numerics::{dot, Matrix};
use crate::training::loss::{
    forward_batch, BatchContext, InversionTrace, SampleCache, PROB_CLAMP,
};
use crate::training::TrainConfig;

/// Gradient of one affine layer.
#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl AffineGrads {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }
}

/// Gradients for every parameter group, shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: Vec<AffineGrads>,
    pub head: AffineGrads,
    pub confusion: Vec<Matrix>,
    pub mixture: Vec<f64>,
    pub d_head: Option<AffineGrads>,
}

impl Gradients {
    pub fn zeros_like(model: &PrismModel) -> Self {
        let encoder = model
            .encoder
            .iter()
            .map(|l| AffineGrads::zeros(l.out_dim(), l.in_dim()))
            .collect();
        let head = AffineGrads::zeros(model.head.out_dim(), model.head.in_dim());
        let k = model.dims().classes;
        let confusion = (0..model.dims().pseudo_labels)
            .map(|_| Matrix::zeros(k, k))
            .collect();
        let mixture = vec![0.0; model.dims().pseudo_labels];
        let d_head = model
            .d_head
            .as_ref()
            .map(|l| AffineGrads::zeros(l.out_dim(), l.in_dim()));
        Self {
            encoder,
            head,
            confusion,
            mixture,
            d_head,
        }
    }

    /// Named flattened views, aligned with `PrismModel::param_groups`.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut groups = Vec::new();
        for (i, layer) in self.encoder.iter().enumerate() {
            groups.push((format!("encoder.{i}.w"), layer.weight.as_slice()));
            groups.push((format!("encoder.{i}.b"), layer.bias.as_slice()));
        }
        groups.push(("head.w".to_string(), self.head.weight.as_slice()));
        groups.push(("head.b".to_string(), self.head.bias.as_slice()));
        for (m, theta) in self.confusion.iter().enumerate() {
            groups.push((format!("confusion.{m}"), theta.as_slice()));
        }
        groups.push(("mixture".to_string(), self.mixture.as_slice()));
        if let Some(d_head) = &self.d_head {
            groups.push(("dhead.w".to_string(), d_head.weight.as_slice()));
            groups.push(("dhead.b".to_string(), d_head.bias.as_slice()));
        }
        groups
    }

    /// Errors with the offending group name if any entry is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        for (name, values) in self.groups() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalInstability { group: name });
            }
        }
        Ok(())
    }
}

/// VJP of softmax: given outputs `y` and upstream gradient `g`, returns the
/// gradient with respect to the logits.
fn softmax_vjp(y: &[f64], g: &[f64]) -> Vec<f64> {
    let s = dot(y, g);
    y.iter().zip(g).map(|(&yi, &gi)| yi * (gi - s)).collect()
}

/// Gradients of the objective on a batch along with its value:
/// `(grads, total, ce, reg)`.
pub(crate) fn backward_full(
    model: &PrismModel,
    xs: &[&[f64]],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(Gradients, f64, f64, f64)> {
    let ctx = BatchContext::build(model, config.inversion)?;
    let fwd = forward_batch(model, &ctx, xs, labels)?;
    let dims = model.dims();
    let k = dims.classes;
    let m = dims.pseudo_labels;
    let n = xs.len() as f64;
    let reg_active = ctx.basis.is_some() && config.lambda != 0.0;

    let mut grads = Gradients::zeros_like(model);
    // Gradient on the column-stochastic matrices (pre-softmax-VJP).
    let mut g_bmat: Vec<Matrix> = (0..m).map(|_| Matrix::zeros(k, k)).collect();
    // Gradient on the stacked basis W (reg path).
    let mut g_w = Matrix::zeros(m * k, k);
    // Gradient on the shared mixture weights d (pre-softmax-VJP).
    let mut g_d_shared = vec![0.0; m];

    for cache in &fwd.caches {
        backward_sample(
            model,
            &ctx,
            cache,
            config,
            n,
            reg_active,
            &mut grads,
            &mut g_bmat,
            &mut g_w,
            &mut g_d_shared,
        );
    }

    // Reg path into the correction matrices: propagate dL/dW through each
    // block's inversion trace, unless frozen for ablation.
    if reg_active && !config.freeze_b_in_reg {
        for (idx, trace) in ctx.traces.iter().enumerate() {
            // dL/dY_m where Y_m = inverse(B_m) is the m-th block of W.
            let mut g_y = Matrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    g_y[(i, j)] = g_w[(idx * k + i, j)];
                }
            }
            match trace {
                InversionTrace::Exact { inverse } => {
                    // d(B^{-1}) = -B^{-1} dB B^{-1}  =>
                    // dL/dB = -Y^T dL/dY Y^T
                    let yt = inverse.transpose();
                    let contribution = yt.matmul(&g_y).matmul(&yt);
                    g_bmat[idx].add_scaled(&contribution, -1.0);
                }
                InversionTrace::Neumann { partials, residual } => {
                    // Reverse the Horner recursion S_j = I + E S_{j-1}.
                    let order = partials.len() - 1;
                    let e_t = residual.transpose();
                    let mut g_s = g_y;
                    let mut g_e = Matrix::zeros(k, k);
                    for j in (1..=order).rev() {
                        g_e.add_scaled(&g_s.matmul(&partials[j - 1].transpose()), 1.0);
                        g_s = e_t.matmul(&g_s);
                    }
                    // E = I - B.
                    g_bmat[idx].add_scaled(&g_e, -1.0);
                }
            }
        }
    }

    // Column-stochastic parameterization: per-column softmax VJP into the
    // confusion logits.
    let mut col_y = vec![0.0; k];
    let mut col_g = vec![0.0; k];
    for idx in 0..m {
        for j in 0..k {
            for i in 0..k {
                col_y[i] = ctx.b_mats[idx][(i, j)];
                col_g[i] = g_bmat[idx][(i, j)];
            }
            let theta_col = softmax_vjp(&col_y, &col_g);
            for i in 0..k {
                grads.confusion[idx][(i, j)] = theta_col[i];
            }
        }
    }

    // Shared mixture weights (not used by the linear_d variant, whose
    // per-sample path is handled in backward_sample).
    if model.d_head.is_none() {
        let d = model.mixture_weights(None)?;
        grads.mixture = softmax_vjp(&d, &g_d_shared);
    }

    let total = fwd.ce + config.lambda * fwd.reg;
    Ok((grads, total, fwd.ce, fwd.reg))
}

#[allow(clippy::too_many_arguments)]
fn backward_sample(
    model: &PrismModel,
    ctx: &BatchContext,
    cache: &SampleCache,
    config: &TrainConfig,
    n: f64,
    reg_active: bool,
    grads: &mut Gradients,
    g_bmat: &mut [Matrix],
    g_w: &mut Matrix,
    g_d_shared: &mut [f64],
) {
    let dims = model.dims();
    let k = dims.classes;
    let m = dims.pseudo_labels;

    // dL/df_hat from the clamped cross entropy (mean reduction).
    let mut g_f = vec![0.0; k];
    if cache.f_hat[cache.label] > PROB_CLAMP {
        g_f[cache.label] = -1.0 / (n * cache.f_hat[cache.label]);
    }

    // Recombination f_hat = sum_m d_m B_m p_m.
    let mut g_p = vec![0.0; m * k];
    let mut g_d = vec![0.0; m];
    for idx in 0..m {
        let b = &ctx.b_mats[idx];
        let block = &cache.p[idx * k..(idx + 1) * k];
        // dL/dp_m += d_m B_m^T g_f
        let bt_g = b.matvec_t(&g_f);
        for (gp, v) in g_p[idx * k..(idx + 1) * k].iter_mut().zip(&bt_g) {
            *gp += cache.d[idx] * v;
        }
        // dL/dB_m += d_m g_f p_m^T
        for i in 0..k {
            for j in 0..k {
                g_bmat[idx][(i, j)] += cache.d[idx] * g_f[i] * block[j];
            }
        }
        // dL/dd_m = <B_m p_m, g_f>
        g_d[idx] = dot(&cache.bp[idx], &g_f);
    }

    // Regularization term r = ||R p|| / ||p||.
    if reg_active && cache.q_norm > 1e-15 {
        let basis = ctx.basis.as_ref().expect("basis present when reg active");
        let upstream = config.lambda / n;
        // dL/dq = upstream * q / (||q|| ||p||)
        let gq_scale = upstream / (cache.q_norm * cache.p_norm);
        let g_q: Vec<f64> = cache.q.iter().map(|qi| qi * gq_scale).collect();

        // Through the projector into p (R is symmetric): R g_q, plus the
        // direct term from the 1/||p|| factor.
        let r_gq = basis.projector_residual().matvec(&g_q);
        let direct = upstream * cache.reg / (cache.p_norm * cache.p_norm);
        for ((gp, rq), pi) in g_p.iter_mut().zip(&r_gq).zip(&cache.p) {
            *gp += rq - direct * pi;
        }

        // Through the projector into W:
        //   dL/dW += -g_q c^T - p b^T + (W c) b^T + (W b) c^T
        // with u = W^T p, c = (W^T W)^{-1} u, a = W^T g_q, b = (W^T W)^{-1} a.
        if !config.freeze_b_in_reg {
            let w = basis.w();
            let gram_inv = basis.gram_inv();
            let u = w.matvec_t(&cache.p);
            let c = gram_inv.matvec(&u);
            let a = w.matvec_t(&g_q);
            let b_vec = gram_inv.matvec(&a);
            let wc = w.matvec(&c);
            let wb = w.matvec(&b_vec);
            for i in 0..m * k {
                for j in 0..k {
                    g_w[(i, j)] += -g_q[i] * c[j] - cache.p[i] * b_vec[j]
                        + wc[i] * b_vec[j]
                        + wb[i] * c[j];
                }
            }
        }
    }

    // Mixture weights.
    let mut g_h_extra = vec![0.0; dims.penultimate];
    if let Some(d_head) = &model.d_head {
        // Per-sample d = softmax(V h + c).
        let g_logits = softmax_vjp(&cache.d, &g_d);
        let dg = grads.d_head.as_mut().expect("d_head grads allocated");
        for i in 0..m {
            for j in 0..dims.penultimate {
                dg.weight[(i, j)] += g_logits[i] * cache.h[j];
            }
            dg.bias[i] += g_logits[i];
        }
        g_h_extra = d_head.weight.matvec_t(&g_logits);
    } else {
        for (acc, g) in g_d_shared.iter_mut().zip(&g_d) {
            *acc += g;
        }
    }

    // Blockwise softmax into the projection-head output.
    let mut g_t = vec![0.0; m * k];
    for idx in 0..m {
        let block_p = &cache.p[idx * k..(idx + 1) * k];
        let block_g = &g_p[idx * k..(idx + 1) * k];
        let gt = softmax_vjp(block_p, block_g);
        g_t[idx * k..(idx + 1) * k].copy_from_slice(&gt);
    }

    // Projection head t = W_z h + b_z.
    for i in 0..m * k {
        for j in 0..dims.penultimate {
            grads.head.weight[(i, j)] += g_t[i] * cache.h[j];
        }
        grads.head.bias[i] += g_t[i];
    }
    let mut g_h = model.head.weight.matvec_t(&g_t);
    for (gh, extra) in g_h.iter_mut().zip(&g_h_extra) {
        *gh += extra;
    }

    // Encoder: final layer is linear, ReLU between the rest.
    let mut delta = g_h;
    for idx in (0..model.encoder.len()).rev() {
        let layer = &model.encoder[idx];
        let input = &cache.layer_inputs[idx];
        let lg = &mut grads.encoder[idx];
        for i in 0..layer.out_dim() {
            if delta[i] == 0.0 {
                continue;
            }
            for j in 0..layer.in_dim() {
                lg.weight[(i, j)] += delta[i] * input[j];
            }
            lg.bias[i] += delta[i];
        }
        if idx > 0 {
            delta = layer.weight.matvec_t(&delta);
            // ReLU mask of the previous layer's output.
            for (d, &a) in delta.iter_mut().zip(input) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
    }
}

/// Gradients of the training objective with respect to every parameter
/// group. Respects `freeze_b_in_reg`: with the flag set, the regularization
/// term contributes nothing to the confusion-logit gradients.
pub fn backward(
    model: &PrismModel,
    xs: &[&[f64]],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<Gradients> {
    let (grads, total, _, _) = backward_full(model, xs, labels, config)?;
    if !total.is_finite() {
        return Err(Error::NumericalInstability {
            group: "loss".to_string(),
        });
    }
    grads.check_finite()?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitVariant, ModelDims, PrismModel};

    fn tiny_model(seed: u64) -> PrismModel {
        PrismModel::new(
            ModelDims {
                input: 3,
                hidden: vec![4],
                penultimate: 4,
                pseudo_labels: 2,
                classes: 2,
            },
            InitVariant::default(),
            seed,
        )
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            lambda: 0.05,
            pseudo_labels: 2,
            classes: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn test_gradients_shapes_match_params() {
        let model = tiny_model(3);
        let grads = Gradients::zeros_like(&model);
        let pg = model.param_groups();
        let gg = grads.groups();
        assert_eq!(pg.len(), gg.len());
        for ((pn, pv), (gn, gv)) in pg.iter().zip(gg.iter()) {
            assert_eq!(pn, gn);
            assert_eq!(pv.len(), gv.len());
        }
    }

    #[test]
    fn test_backward_zero_for_unreachable_parameters() {
        // Zero first-layer weights and biases kill every ReLU, so nothing
        // upstream of the dead activations can receive gradient.
        let mut model = tiny_model(3);
        model.encoder[0].weight = Matrix::zeros(4, 3);
        model.encoder[0].bias = vec![0.0; 4];
        let xs: Vec<&[f64]> = vec![&[0.4, -0.2, 0.9]];
        let grads = backward(&model, &xs, &[1], &tiny_config()).unwrap();
        // dL/dW_0 = delta * x with delta masked by the dead ReLUs: all zero.
        assert_eq!(grads.encoder[0].weight.max_abs(), 0.0);
        assert_eq!(grads.encoder[0].bias, vec![0.0; 4]);
    }

    #[test]
    fn test_backward_finite_check_names_group() {
        let mut model = tiny_model(3);
        // Poison the head weights so the forward pass fails validation
        // before even reaching the gradient check.
        model.head.weight[(0, 0)] = f64::NAN;
        let xs: Vec<&[f64]> = vec![&[0.4, -0.2, 0.9]];
        let result = backward(&model, &xs, &[1], &tiny_config());
        assert!(result.is_err());
    }

    #[test]
    fn test_backward_deterministic() {
        let model = tiny_model(9);
        let xs: Vec<&[f64]> = vec![&[0.4, -0.2, 0.9], &[-0.1, 0.2, 0.3]];
        let config = tiny_config();
        let a = backward(&model, &xs, &[0, 1], &config).unwrap();
        let b = backward(&model, &xs, &[0, 1], &config).unwrap();
        for ((_, ga), (_, gb)) in a.groups().iter().zip(b.groups().iter()) {
            assert_eq!(ga, gb);
        }
    }
}
