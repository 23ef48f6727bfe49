use rand::Rng;

use super::{EncoderError, ModelConfig, TransformerBlock};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Vision tower. `prompt_tokens` are the visual prompt-tuning tokens; every
/// other tensor here belongs to the frozen backbone.
#[derive(Debug, Clone)]
pub struct VisualEncoderParams {
    pub patch_projection: ParamId,
    pub positional_embeddings: ParamId,
    pub class_token: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm_gamma: ParamId,
    pub final_norm_beta: ParamId,
    pub visual_projection: ParamId,
    pub prompt_tokens: ParamId,
    pub num_patches: usize,
    pub num_prompts: usize,
    pub eps: f64,
}

impl VisualEncoderParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let std = cfg.init_std;
        let seq = 1 + cfg.num_prompts + cfg.num_patches;
        let patch_projection = store.add(
            "visual.patch_projection",
            Tensor::randn(&[cfg.patch_pixels, cfg.d_vis], std, rng),
        );
        let positional_embeddings = store.add("visual.pos", Tensor::randn(&[seq, cfg.d_vis], std, rng));
        let class_token = store.add("visual.class_token", Tensor::randn(&[cfg.d_vis], std, rng));
        let blocks = (0..cfg.num_blocks)
            .map(|i| {
                TransformerBlock::init(
                    store,
                    &format!("visual.block{i}"),
                    cfg.d_vis,
                    cfg.mlp_ratio * cfg.d_vis,
                    cfg.num_heads,
                    std,
                    cfg.ln_eps,
                    rng,
                )
            })
            .collect();
        let final_norm_gamma = store.add("visual.final_norm.gamma", Tensor::filled(&[cfg.d_vis], 1.0));
        let final_norm_beta = store.add("visual.final_norm.beta", Tensor::zeros(&[cfg.d_vis]));
        let visual_projection = store.add("visual.projection", Tensor::randn(&[cfg.d_vis, cfg.d_embed], std, rng));
        let prompt_tokens = store.add(
            "visual.prompt_tokens",
            Tensor::randn(&[cfg.num_prompts.max(1), cfg.d_vis], cfg.prompt_init_std, rng),
        );
        Self {
            patch_projection,
            positional_embeddings,
            class_token,
            blocks,
            final_norm_gamma,
            final_norm_beta,
            visual_projection,
            prompt_tokens,
            num_patches: cfg.num_patches,
            num_prompts: cfg.num_prompts,
            eps: cfg.ln_eps,
        }
    }

    /// Backbone parameters (everything except the prompt tokens).
    pub fn backbone_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.patch_projection, self.positional_embeddings, self.class_token];
        ids.extend(self.blocks.iter().flat_map(TransformerBlock::param_ids));
        ids.extend([self.final_norm_gamma, self.final_norm_beta, self.visual_projection]);
        ids
    }
}

/// Encodes a patch grid `[wh × patch_pixels]` to a unit-norm `[1 × d]` image
/// embedding.
///
/// The sequence is `[class, prompt_1..prompt_p, patch_1..patch_wh]`; the class
/// token is pooled. With `use_prompts == false` the prompt rows are skipped
/// and the class and patch tokens keep their positional embeddings.
pub fn encode_image(
    tape: &mut Tape,
    store: &ParamStore,
    params: &VisualEncoderParams,
    patches: Var,
    use_prompts: bool,
) -> Result<Var, EncoderError> {
    let got = tape.value(patches).rows();
    if got != params.num_patches || tape.value(patches).shape().len() != 2 {
        return Err(EncoderError::PatchCount {
            got,
            expected: params.num_patches,
        });
    }
    let proj = tape.param(store, params.patch_projection);
    let patch_tokens = tape.matmul(patches, proj)?;
    let cls = tape.param(store, params.class_token);

    let prompts_on = use_prompts && params.num_prompts > 0;
    let p = params.num_prompts;
    let mut rows = vec![cls];
    let mut positions = vec![0usize];
    if prompts_on {
        rows.push(tape.param(store, params.prompt_tokens));
        positions.extend(1..=p);
    }
    rows.push(patch_tokens);
    positions.extend(1 + p..1 + p + params.num_patches);

    let seq = tape.concat_rows(&rows)?;
    let pos_table = tape.param(store, params.positional_embeddings);
    let pos = tape.gather_rows(pos_table, &positions)?;
    let mut x = tape.add(seq, pos)?;
    for block in &params.blocks {
        x = block.forward(tape, store, x)?;
    }
    let g = tape.param(store, params.final_norm_gamma);
    let b = tape.param(store, params.final_norm_beta);
    let x = tape.layer_norm(x, g, b, params.eps)?;
    let pooled = tape.gather_rows(x, &[0])?;
    let vp = tape.param(store, params.visual_projection);
    let out = tape.matmul(pooled, vp)?;
    Ok(tape.l2_normalize_rows(out)?)
}
