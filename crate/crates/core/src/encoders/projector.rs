use rand::Rng;

use super::{EncoderError, ModelConfig};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Bias-free one-hidden-layer ReLU MLP mapping face features into the text
/// encoder's token-embedding space.
#[derive(Debug, Clone)]
pub struct FaceProjector {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl FaceProjector {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let std1 = (2.0 / cfg.d_face as f64).sqrt();
        let std2 = (1.0 / cfg.d_hidden as f64).sqrt();
        Self {
            w1: store.add("projector.w1", Tensor::randn(&[cfg.d_face, cfg.d_hidden], std1, rng)),
            w2: store.add("projector.w2", Tensor::randn(&[cfg.d_hidden, cfg.d_tok], std2, rng)),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.w2]
    }
}

/// `[n × d_face] -> [n × d_tok]`, `ReLU(x·W1)·W2`. No output normalization:
/// the result lives in raw token-embedding space.
pub fn project_face(tape: &mut Tape, store: &ParamStore, proj: &FaceProjector, face: Var) -> Result<Var, EncoderError> {
    let w1 = tape.param(store, proj.w1);
    let w2 = tape.param(store, proj.w2);
    let h = tape.matmul(face, w1)?;
    let h = tape.relu(h)?;
    Ok(tape.matmul(h, w2)?)
}
