//! Finite-difference verification of the analytic gradients.

use crate::error::Result;
use crate::model::PrismModel;
use crate::training::backward::backward_full;
use crate::training::loss::total_loss;
use crate::training::TrainConfig;

/// Result of checking one parameter group.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    pub max_rel_err: f64,
}

/// Compares the analytic gradient of the objective against central finite
/// differences `(f(x + eps) - f(x - eps)) / (2 eps)` for every coordinate of
/// every parameter group. The relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    model: &PrismModel,
    xs: &[&[f64]],
    labels: &[usize],
    config: &TrainConfig,
    eps: f64,
) -> Result<Vec<GroupCheck>> {
    assert!(eps > 0.0, "grad_check needs a positive step");
    let (analytic, _, _, _) = backward_full(model, xs, labels, config)?;
    let analytic_groups: Vec<(String, Vec<f64>)> = analytic
        .groups()
        .into_iter()
        .map(|(name, values)| (name, values.to_vec()))
        .collect();

    let mut probe = model.clone();
    let mut checks = Vec::with_capacity(analytic_groups.len());
    for (group_idx, (name, analytic_values)) in analytic_groups.iter().enumerate() {
        let mut max_rel_err = 0.0f64;
        for (coord, &analytic) in analytic_values.iter().enumerate() {
            let original = probe.param_groups_mut()[group_idx].1[coord];

            probe.param_groups_mut()[group_idx].1[coord] = original + eps;
            let (loss_plus, _, _) = total_loss(&probe, xs, labels, config)?;
            probe.param_groups_mut()[group_idx].1[coord] = original - eps;
            let (loss_minus, _, _) = total_loss(&probe, xs, labels, config)?;
            probe.param_groups_mut()[group_idx].1[coord] = original;

            let numeric = (loss_plus - loss_minus) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel_err = max_rel_err.max(rel);
        }
        checks.push(GroupCheck {
            name: name.clone(),
            max_rel_err,
        });
    }
    Ok(checks)
}
