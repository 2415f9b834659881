//! Dice-based segmentation loss, the auxiliary mixing loss and their weighted sum.

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::model::MaskBundle;
use crate::tensor::{Tape, Var};

/// Dice smoothing term; makes empty-vs-empty a perfect score.
pub const DICE_EPS: f64 = 1.0;

/// Mean over leading slices of `1 - (2·Σpg + ε) / (Σp + Σg + ε)`, where the
/// sums run over the two innermost (spatial) axes.
pub fn dice_loss(tape: &mut Tape, prob: Var, target: Var) -> Result<Var> {
    let s = tape.shape(prob).to_vec();
    if s != tape.shape(target) || s.len() < 2 {
        return Err(Error::dim(format!(
            "dice_loss needs equal shapes of rank >= 2, got {s:?} and {:?}",
            tape.shape(target)
        )));
    }
    if tape
        .value(prob)
        .data()
        .iter()
        .any(|&p| !(0.0..=1.0).contains(&p))
    {
        return Err(Error::contract(
            "dice_loss probabilities must lie in [0, 1]",
        ));
    }
    if tape
        .value(target)
        .data()
        .iter()
        .any(|&g| g != 0.0 && g != 1.0)
    {
        return Err(Error::contract("dice_loss targets must be 0 or 1"));
    }
    let hw = s[s.len() - 2] * s[s.len() - 1];
    let n = tape.value(prob).len() / hw;
    let p = tape.reshape(prob, &[n, hw])?;
    let g = tape.reshape(target, &[n, hw])?;
    let pg = tape.mul(p, g)?;
    let inter = tape.sum_axis(pg, 1)?;
    let sp = tape.sum_axis(p, 1)?;
    let sg = tape.sum_axis(g, 1)?;
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, DICE_EPS);
    let den = tape.add(sp, sg)?;
    let den = tape.add_scalar(den, DICE_EPS);
    let ratio = tape.div(num, den)?;
    let mean = tape.mean(ratio);
    let neg = tape.scale(mean, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Dice of `sigmoid(aux_logits)` against all foreground labels collapsed to 1.
pub fn mixing_loss(tape: &mut Tape, aux_logits: Var, gt: &LabelMap) -> Result<Var> {
    let target = gt.binary_tensor();
    if tape.shape(aux_logits) != target.shape() {
        return Err(Error::dim(format!(
            "aux logits {:?} do not match labels {:?}",
            tape.shape(aux_logits),
            target.shape()
        )));
    }
    let prob = tape.sigmoid(aux_logits);
    let target = tape.constant(target);
    dice_loss(tape, prob, target)
}

/// Dice on final mask probabilities: sigmoid for one output channel,
/// softmax over classes with one-vs-all targets otherwise.
pub fn segmentation_loss(tape: &mut Tape, logits: Var, gt: &LabelMap) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 4 || s[0] != gt.frames || s[2] != gt.height || s[3] != gt.width {
        return Err(Error::dim(format!(
            "logits {s:?} do not match labels [{}, _, {}, {}]",
            gt.frames, gt.height, gt.width
        )));
    }
    let n_class = s[1];
    let (prob, target) = if n_class == 1 {
        (tape.sigmoid(logits), gt.binary_tensor())
    } else {
        if let Some(&c) = gt.data.iter().find(|&&c| c as usize >= n_class) {
            return Err(Error::dim(format!(
                "label {c} outside {n_class} output classes"
            )));
        }
        (tape.softmax(logits, 1)?, gt.one_hot(n_class))
    };
    let target = tape.constant(target);
    dice_loss(tape, prob, target)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_iou: f64,
    pub l_mix: f64,
    pub total: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub l_iou: Var,
    pub l_mix: Var,
    pub total: Var,
    pub lambda: f64,
}

impl LossTerms {
    pub fn report(&self, tape: &Tape) -> LossReport {
        LossReport {
            l_iou: tape.value(self.l_iou).item(),
            l_mix: tape.value(self.l_mix).item(),
            total: tape.value(self.total).item(),
            lambda: self.lambda,
        }
    }
}

/// `L = L_IoU + λ·L_mix`
pub fn total_loss(
    tape: &mut Tape,
    bundle: &MaskBundle,
    gt: &LabelMap,
    lambda: f64,
) -> Result<LossTerms> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let l_iou = segmentation_loss(tape, bundle.logits, gt)?;
    let l_mix = mixing_loss(tape, bundle.aux_logits, gt)?;
    let weighted = tape.scale(l_mix, lambda);
    let total = tape.add(l_iou, weighted)?;
    Ok(LossTerms {
        l_iou,
        l_mix,
        total,
        lambda,
    })
}
