use crate::dataset::Segment;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore, Tape, Var};

/// Regression target `(T_c*, T_l*)` of a proposal against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetTarget {
    pub center: f64,
    pub length: f64,
}

/// `T_c* = (loc − loc*) / len*`, `T_l* = ln(len / len*)`, with `loc` the
/// segment midpoint and `len` its length.
pub fn encode_offsets(proposal: Segment, gt: Segment) -> Result<OffsetTarget> {
    if gt.is_empty() || proposal.is_empty() {
        return Err(Error::param(format!(
            "offset encoding needs positive lengths (proposal {proposal}, ground truth {gt})"
        )));
    }
    let (loc, len) = midpoint_len(proposal);
    let (loc_gt, len_gt) = midpoint_len(gt);
    Ok(OffsetTarget {
        center: (loc - loc_gt) / len_gt,
        length: (len / len_gt).ln(),
    })
}

fn midpoint_len(s: Segment) -> (f64, f64) {
    ((s.start + s.end) as f64 / 2.0, s.len() as f64)
}

/// Scalar triplet objective: `Σ max(0, γ − s⁺ + s⁻) + λ‖θ‖²`.
pub fn triplet_loss(s_pos: &[f64], s_neg: &[f64], params: &ParamStore, gamma: f64, lambda: f64) -> f64 {
    assert_eq!(s_pos.len(), s_neg.len(), "one negative score per positive");
    let hinge: f64 = s_pos
        .iter()
        .zip(s_neg)
        .map(|(p, n)| (gamma - p + n).max(0.0))
        .sum();
    let reg: f64 = params.iter().map(|(_, p)| p.value.sum_squares()).sum();
    hinge + lambda * reg
}

/// Mean L1 distance between predicted and target offsets.
pub fn regression_loss(preds: &[(f64, f64)], targets: &[OffsetTarget]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::param(format!(
            "regression loss needs equal non-empty lists ({} predictions, {} targets)",
            preds.len(),
            targets.len()
        )));
    }
    let total: f64 = preds
        .iter()
        .zip(targets)
        .map(|((c, l), t)| (c - t.center).abs() + (l - t.length).abs())
        .sum();
    Ok(total / preds.len() as f64)
}

/// Recorded triplet objective over `B×1` score columns. The hinge and the
/// L1 terms below use subgradient 0 at their kinks.
pub fn triplet_loss_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    s_pos: Var,
    s_neg: Var,
    gamma: f64,
    lambda: f64,
) -> Result<Var> {
    let gap = tape.sub(s_neg, s_pos)?;
    let margin = tape.add_scalar(gap, gamma);
    let hinge = tape.relu(margin);
    let mut loss = tape.sum(hinge);
    if lambda != 0.0 {
        let mut reg: Option<Var> = None;
        for name in store.names() {
            let p = tape.param(store, name)?;
            let sq = tape.sum_squares(p);
            reg = Some(match reg {
                None => sq,
                Some(r) => tape.add(r, sq)?,
            });
        }
        if let Some(reg) = reg {
            let reg = tape.scale(reg, lambda);
            loss = tape.add(loss, reg)?;
        }
    }
    Ok(loss)
}

/// Recorded mean L1 regression loss of `B×2` predictions.
pub fn regression_loss_on_tape(tape: &mut Tape, preds: Var, targets: &[OffsetTarget]) -> Result<Var> {
    let rows = tape.value(preds).rows();
    if rows == 0 || rows != targets.len() {
        return Err(Error::param(format!(
            "regression loss needs one target per prediction ({rows} vs {})",
            targets.len()
        )));
    }
    let mut t = Matrix::zeros(rows, 2);
    for (i, target) in targets.iter().enumerate() {
        t.set(i, 0, target.center);
        t.set(i, 1, target.length);
    }
    let t = tape.constant(t);
    let diff = tape.sub(preds, t)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs);
    Ok(tape.scale(total, 1.0 / rows as f64))
}
