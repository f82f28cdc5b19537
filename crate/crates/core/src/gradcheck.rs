//! Finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::model::{BlockId, FactorizedModel};
use crate::regularizers::RegTerm;
use crate::trainer::reg_value_grad;

/// One training example with its descriptor already encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub id: BlockId,
    pub frozen: bool,
    pub max_rel_error: f64,
    /// largest analytic gradient magnitude in the block
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}

pub const STEP: f64 = 1e-6;

/// Relative-error denominator floor; keeps roundoff on vanishing gradients
/// from dominating.
pub const REL_FLOOR: f64 = 1e-4;

fn batch_objective(model: &FactorizedModel, batch: &[Example], loss: Loss, regs: &[RegTerm]) -> Result<f64> {
    let mut total = 0.0;
    for e in batch {
        total += loss.value_grad(&model.scores(&e.x, &e.z)?, e.label)?.0;
    }
    Ok(total / batch.len() as f64 + reg_value_grad(model, regs, None)?)
}

fn analytic(model: &FactorizedModel, batch: &[Example], loss: Loss, regs: &[RegTerm]) -> Result<Vec<Vec<f64>>> {
    let mut grads = model.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    for e in batch {
        let (_, mut dy) = loss.value_grad(&model.scores(&e.x, &e.z)?, e.label)?;
        dy.iter_mut().for_each(|g| *g *= scale);
        model.backward(&e.x, &e.z, &dy, &mut grads)?;
    }
    reg_value_grad(model, regs, Some(&mut grads))?;
    Ok(grads)
}

/// Compare analytic gradients of the mean batch loss plus regularisers with
/// central differences, block by block.
pub fn grad_check(model: &FactorizedModel, batch: &[Example], loss: Loss, regs: &[RegTerm]) -> Result<GradCheckReport> {
    grad_check_with(model, batch, loss, regs, |_, _| {})
}

/// As [`grad_check`], with a hook that may alter each block's analytic
/// gradient before comparison (used to confirm that faults are caught).
pub fn grad_check_with(
    model: &FactorizedModel,
    batch: &[Example],
    loss: Loss,
    regs: &[RegTerm],
    mut tamper: impl FnMut(BlockId, &mut [f64]),
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::InvalidValue("gradient check needs a nonempty batch".into()));
    }
    let specs = model.block_specs();
    let mut grads = analytic(model, batch, loss, regs)?;
    let mut probe = model.clone();
    let mut blocks = Vec::with_capacity(specs.len());
    for (b, spec) in specs.iter().enumerate() {
        tamper(spec.id, &mut grads[b]);
        let max_abs_grad = grads[b].iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if spec.frozen {
            // frozen blocks must receive no gradient at all
            let max_rel_error = if max_abs_grad == 0.0 { 0.0 } else { f64::INFINITY };
            blocks.push(BlockCheck { id: spec.id, frozen: true, max_rel_error, max_abs_grad });
            continue;
        }
        let mut worst = 0.0f64;
        for i in 0..spec.shape.len() {
            let orig = probe.block_data()[b][i];
            probe.block_data_mut()[b][i] = orig + STEP;
            let up = batch_objective(&probe, batch, loss, regs)?;
            probe.block_data_mut()[b][i] = orig - STEP;
            let dn = batch_objective(&probe, batch, loss, regs)?;
            probe.block_data_mut()[b][i] = orig;
            let fd = (up - dn) / (2.0 * STEP);
            let an = grads[b][i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        blocks.push(BlockCheck { id: spec.id, frozen: false, max_rel_error: worst, max_abs_grad });
    }
    Ok(GradCheckReport { blocks })
}

/// Distance of the batch from the hinge kink, `min |1 − y·ŷ|`; infinite for
/// smooth losses.
pub fn kink_distance(model: &FactorizedModel, batch: &[Example], loss: Loss) -> Result<f64> {
    if loss != Loss::Hinge {
        return Ok(f64::INFINITY);
    }
    let mut d = f64::INFINITY;
    for e in batch {
        let s = model.scores(&e.x, &e.z)?[0];
        let y = if e.label == 1 { 1.0 } else { -1.0 };
        d = d.min((1.0 - y * s).abs());
    }
    Ok(d)
}
