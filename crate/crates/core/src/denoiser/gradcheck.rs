use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::model::Denoiser;
use super::params::ParamGroup;
use crate::corpus::TokenSeq;
use crate::error::Result;
use crate::transition::TransitionSet;

/// Gradients smaller than this in both estimates are compared absolutely.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct GroupError {
    pub group: ParamGroup,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub groups: Vec<GroupError>,
    pub max_abs_grad: f64,
}

/// `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR)
}

/// Compare the analytic gradient of the batch objective with central finite
/// differences at `per_group` random parameters of every group. The
/// corrupted inputs are drawn once, so the objective is deterministic.
#[allow(clippy::too_many_arguments)]
pub fn grad_check<R: Rng + ?Sized>(
    model: &Denoiser<f64>,
    x0: &[TokenSeq],
    steps: &[usize],
    ts: &TransitionSet<f64>,
    lambda: f64,
    eps: f64,
    per_group: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let vocab = &model.config().vocab;
    let xt: Vec<TokenSeq> = x0
        .iter()
        .zip(steps)
        .map(|(s, &t)| ts.corrupt_sequence(vocab, s, t, rng))
        .collect();
    let weights = vec![1.0; x0.len()];
    let eval = |p: &[f64]| -> Result<f64> {
        Ok(model
            .objective(p, x0, &xt, steps, &weights, lambda, ts, None, false)?
            .loss
            .total)
    };
    let base = model.params().to_vec();
    let analytic = model
        .objective(&base, x0, &xt, steps, &weights, lambda, ts, None, true)?
        .grad
        .expect("gradient requested");

    let layout = model.layout();
    let mut groups = Vec::new();
    let mut probe = base.clone();
    for group in ParamGroup::ALL {
        let members: Vec<usize> = layout
            .specs
            .iter()
            .filter(|s| s.group == group)
            .flat_map(|s| s.range())
            .collect();
        if members.is_empty() {
            continue;
        }
        let picks = sample(rng, members.len(), per_group.min(members.len()));
        let mut worst: f64 = 0.0;
        for i in picks.iter().map(|j| members[j]) {
            probe[i] = base[i] + eps;
            let up = eval(&probe)?;
            probe[i] = base[i] - eps;
            let down = eval(&probe)?;
            probe[i] = base[i];
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        groups.push(GroupError {
            group,
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max),
        checked: groups.iter().map(|g| g.checked).sum(),
        groups,
        max_abs_grad: analytic.iter().fold(0.0f64, |m, g| m.max(g.abs())),
    })
}
