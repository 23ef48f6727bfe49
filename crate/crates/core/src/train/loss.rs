use super::TrainError;
use crate::tensor::{Tape, Var};

/// Contrastive loss over a batch of matched rows: `c[i]` pairs with `v[i]`.
///
/// Rows are assumed unit-norm, so `c · vᵀ` is the cosine matrix. Logits are
/// `logit_scale · cos`; with `symmetric` the image→text direction is
/// averaged in.
pub fn info_nce(tape: &mut Tape, c: Var, v: Var, logit_scale: f64, symmetric: bool) -> Result<Var, TrainError> {
    let b = tape.value(c).rows();
    if b < 2 {
        return Err(TrainError::Usage(format!("contrastive batch needs at least 2 pairs, got {b}")));
    }
    let vt = tape.transpose(v)?;
    let sims = tape.matmul(c, vt)?;
    info_nce_from_sims(tape, sims, logit_scale, symmetric)
}

/// Same loss, starting from a precomputed `[B × B]` similarity matrix.
pub fn info_nce_from_sims(tape: &mut Tape, sims: Var, logit_scale: f64, symmetric: bool) -> Result<Var, TrainError> {
    let b = tape.value(sims).rows();
    if b < 2 || tape.value(sims).cols() != b {
        return Err(TrainError::Usage(format!(
            "similarity matrix must be square with B >= 2, got {:?}",
            tape.value(sims).shape()
        )));
    }
    let diag: Vec<usize> = (0..b).collect();
    let logits = tape.scale(sims, logit_scale)?;
    let text_to_image = direction(tape, logits, &diag)?;
    if !symmetric {
        return Ok(text_to_image);
    }
    let lt = tape.transpose(logits)?;
    let image_to_text = direction(tape, lt, &diag)?;
    let both = tape.add(text_to_image, image_to_text)?;
    Ok(tape.scale(both, 0.5)?)
}

fn direction(tape: &mut Tape, logits: Var, diag: &[usize]) -> Result<Var, TrainError> {
    let ls = tape.log_softmax_rows(logits)?;
    let pos = tape.pick(ls, diag)?;
    let m = tape.mean(pos)?;
    Ok(tape.scale(m, -1.0)?)
}
