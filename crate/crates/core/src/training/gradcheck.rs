//! Central finite-difference verification of the analytic gradient.

use crate::error::Result;
use crate::model::AspectModel;

use super::objective::{evaluate, flatten_params, set_flat_params, Batch, Gradients, ObjectiveSpec};
use super::regularizer::OpinionSimilarity;

/// Max over every parameter coordinate of
/// `|analytic - numeric| / max(1, |numeric|)`. Meant for down-sized models;
/// the cost is two objective evaluations per coordinate.
pub fn gradient_check(
    model: &AspectModel,
    batch: &Batch,
    spec: &ObjectiveSpec,
    sim: Option<&OpinionSimilarity>,
    epsilon: f64,
) -> Result<f64> {
    let mut analytic = Gradients::zeros_like(model);
    evaluate(model, batch, spec, sim, Some(&mut analytic))?;
    let analytic = analytic.flatten();

    let base = flatten_params(model);
    let mut probe = model.clone();
    let mut theta = base.clone();
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        theta[k] = base[k] + epsilon;
        set_flat_params(&mut probe, &theta);
        let up = evaluate(&probe, batch, spec, sim, None)?.total();
        theta[k] = base[k] - epsilon;
        set_flat_params(&mut probe, &theta);
        let down = evaluate(&probe, batch, spec, sim, None)?.total();
        theta[k] = base[k];

        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max((analytic[k] - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
