//! Finite differences against reverse-mode gradients.
//!
//! The numeric side uses the fourth-order five-point stencil. Plain central
//! differences cannot serve every entry with one step: at small steps the
//! loss roundoff (a few ulp divided by the step) swamps near-zero gradients,
//! and at larger steps the `O(h²)` truncation shows on high-curvature weights.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Model, ParamGroup, Phase, TokenWindow};
use crate::tape::Tape;

/// Gradients smaller than this are compared in absolute terms. Biases that
/// feed batch norm and key biases have exact zero gradients, where the
/// numeric estimate is pure roundoff.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Stencil step near `ε_mach^{1/5}`, which balances `O(h⁴)` truncation against roundoff.
pub const DEFAULT_STEP: f64 = 3e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn group(&self, g: ParamGroup) -> Option<&GroupCheck> {
        self.groups.iter().find(|c| c.group == g)
    }
}

/// Training-phase loss without dropout.
pub fn batch_loss(model: &Model, batch: &[&TokenWindow]) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = model.loss(&mut tape, batch, Phase::Train, None)?;
    Ok(tape.value(loss).data[0])
}

/// Analytic gradient of the training-phase loss for every parameter tensor.
pub fn analytic_gradients(model: &Model, batch: &[&TokenWindow]) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let (loss, fwd) = model.loss(&mut tape, batch, Phase::Train, None)?;
    let grads = tape.backward(loss);
    Ok(fwd
        .param_vars
        .iter()
        .zip(&model.params)
        .map(|(v, p)| {
            grads
                .get(*v)
                .map(|m| m.data.clone())
                .unwrap_or_else(|| vec![0.0; p.value.len()])
        })
        .collect())
}

/// Compares up to `per_group` random entries of every parameter group (all
/// `φ` entries are always included) using stencil step `epsilon`.
pub fn grad_check(
    model: &Model,
    batch: &[&TokenWindow],
    epsilon: f64,
    per_group: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(model, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: BTreeMap<ParamGroup, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, p) in model.params.iter().enumerate() {
        entries
            .entry(p.group)
            .or_default()
            .extend((0..p.value.len()).map(|e| (i, e)));
    }
    let mut groups = Vec::new();
    let mut probe = model.clone();
    for (group, mut all) in entries {
        if group != ParamGroup::Phi && all.len() > per_group {
            for k in 0..per_group {
                let j = rng.random_range(k..all.len());
                all.swap(k, j);
            }
            all.truncate(per_group);
        }
        let mut check = GroupCheck {
            group,
            checked: all.len(),
            max_rel_error: 0.0,
            max_abs_grad: 0.0,
        };
        for (i, e) in all {
            let orig = probe.params[i].value.data[e];
            let mut at = |k: f64| {
                probe.params[i].value.data[e] = orig + k * epsilon;
                batch_loss(&probe, batch)
            };
            let (u2, u1, d1, d2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
            probe.params[i].value.data[e] = orig;
            let numeric = (8.0 * (u1 - d1) - (u2 - d2)) / (12.0 * epsilon);
            let a = analytic[i][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.max_abs_grad = check.max_abs_grad.max(a.abs());
        }
        groups.push(check);
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        groups,
        max_rel_error,
    })
}
