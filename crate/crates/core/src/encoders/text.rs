use rand::Rng;

use super::{EncoderError, ModelConfig, TransformerBlock};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Text tower: token embeddings in, one unit-norm caption embedding out.
#[derive(Debug, Clone)]
pub struct TextEncoderParams {
    pub vocab_embeddings: ParamId,
    pub positional_embeddings: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm_gamma: ParamId,
    pub final_norm_beta: ParamId,
    pub text_projection: ParamId,
    pub max_len: usize,
    pub eps: f64,
}

impl TextEncoderParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let std = cfg.init_std;
        let vocab_embeddings = store.add("text.vocab", Tensor::randn(&[cfg.vocab_size, cfg.d_tok], std, rng));
        let positional_embeddings = store.add("text.pos", Tensor::randn(&[cfg.max_text_len, cfg.d_tok], std, rng));
        let blocks = (0..cfg.num_blocks)
            .map(|i| {
                TransformerBlock::init(
                    store,
                    &format!("text.block{i}"),
                    cfg.d_tok,
                    cfg.mlp_ratio * cfg.d_tok,
                    cfg.num_heads,
                    std,
                    cfg.ln_eps,
                    rng,
                )
            })
            .collect();
        Self {
            vocab_embeddings,
            positional_embeddings,
            blocks,
            final_norm_gamma: store.add("text.final_norm.gamma", Tensor::filled(&[cfg.d_tok], 1.0)),
            final_norm_beta: store.add("text.final_norm.beta", Tensor::zeros(&[cfg.d_tok])),
            text_projection: store.add("text.projection", Tensor::randn(&[cfg.d_tok, cfg.d_embed], std, rng)),
            max_len: cfg.max_text_len,
            eps: cfg.ln_eps,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.vocab_embeddings, self.positional_embeddings];
        ids.extend(self.blocks.iter().flat_map(TransformerBlock::param_ids));
        ids.extend([self.final_norm_gamma, self.final_norm_beta, self.text_projection]);
        ids
    }

    /// Embeds vocabulary ids as rows `[n × d_tok]`.
    pub fn embed_words(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var, EncoderError> {
        let table = tape.param(store, self.vocab_embeddings);
        Ok(tape.gather_rows(table, ids)?)
    }
}

/// Encodes a token-embedding sequence `[L × d_tok]` (any injected face token
/// already spliced in) to a unit-norm `[1 × d]` caption embedding.
///
/// Attention is bidirectional; the final position (end-of-text) is pooled.
pub fn encode_text(
    tape: &mut Tape,
    store: &ParamStore,
    params: &TextEncoderParams,
    tokens: Var,
) -> Result<Var, EncoderError> {
    let len = tape.value(tokens).rows();
    if len > params.max_len {
        return Err(EncoderError::SequenceTooLong {
            len,
            max: params.max_len,
        });
    }
    let pos_table = tape.param(store, params.positional_embeddings);
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.gather_rows(pos_table, &positions)?;
    let mut x = tape.add(tokens, pos)?;
    for block in &params.blocks {
        x = block.forward(tape, store, x)?;
    }
    let g = tape.param(store, params.final_norm_gamma);
    let b = tape.param(store, params.final_norm_beta);
    let x = tape.layer_norm(x, g, b, params.eps)?;
    let pooled = tape.gather_rows(x, &[len - 1])?;
    let proj = tape.param(store, params.text_projection);
    let out = tape.matmul(pooled, proj)?;
    Ok(tape.l2_normalize_rows(out)?)
}
