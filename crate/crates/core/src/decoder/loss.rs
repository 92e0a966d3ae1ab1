use super::DecodeStep;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Weighted multi-head cross-entropy for one caption.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// `Σ_j weight_j · L^j` on the tape.
    pub total: Var,
    /// `L^j = Σ_t −ln p_j(y_t)` per head, in head order.
    pub components: Vec<f64>,
}

/// Sums per-step cross-entropy for every head and combines the heads with
/// `weights`. `targets[t]` is the token step `t` should predict.
pub fn multilayer_loss(
    tape: &mut Tape,
    steps: &[DecodeStep],
    targets: &[usize],
    weights: &[f64],
) -> Result<LossBreakdown> {
    if steps.is_empty() || steps.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} decoding steps for {} targets",
            steps.len(),
            targets.len()
        )));
    }
    let heads = weights.len();
    if steps.iter().any(|s| s.heads.len() != heads) {
        return Err(Error::InvalidArgument(format!("expected {heads} heads per step")));
    }
    let mut per_head = Vec::with_capacity(heads);
    for j in 0..heads {
        let mut terms = Vec::with_capacity(steps.len());
        for (step, &y) in steps.iter().zip(targets) {
            let p = tape.softmax(step.heads[j])?;
            terms.push(tape.cross_entropy(p, y)?);
        }
        let stacked = tape.concat(&terms)?;
        per_head.push(tape.sum(stacked));
    }
    let components = per_head.iter().map(|&v| tape.value(v).data()[0]).collect();
    let mut total: Option<Var> = None;
    for (&l, &w) in per_head.iter().zip(weights) {
        let scaled = tape.scale(l, w);
        total = Some(match total {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    Ok(LossBreakdown {
        total: total.expect("at least one head"),
        components,
    })
}
