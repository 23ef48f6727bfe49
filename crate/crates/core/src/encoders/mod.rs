//! The miniature dual encoder plus the face pathway.
//!
//! Text and visual backbones are frozen during identity training; only the
//! [`FaceProjector`] and the visual prompt tokens learn.

mod block;
mod face;
mod projector;
mod text;
mod visual;

pub use block::TransformerBlock;
pub use face::FaceAnchorTable;
pub use projector::{project_face, FaceProjector};
pub use text::{encode_text, TextEncoderParams};
pub use visual::{encode_image, VisualEncoderParams};

use serde::{Deserialize, Serialize};

use crate::query::Vocabulary;
use crate::seed;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("expected {expected} patches, got {got}")]
    PatchCount { got: usize, expected: usize },
    #[error("unknown identity {0}")]
    UnknownIdentity(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_tok: usize,
    pub d_vis: usize,
    pub d_embed: usize,
    pub d_face: usize,
    pub d_hidden: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub num_patches: usize,
    pub patch_pixels: usize,
    pub max_text_len: usize,
    pub num_prompts: usize,
    /// Visual prompt tuning on/off (off reproduces the projector-only baseline).
    pub use_vpt: bool,
    pub init_std: f64,
    pub prompt_init_std: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: Vocabulary::builtin().len(),
            d_tok: 64,
            d_vis: 64,
            d_embed: 32,
            d_face: 64,
            d_hidden: 128,
            num_blocks: 2,
            num_heads: 4,
            mlp_ratio: 2,
            num_patches: 16,
            patch_pixels: 32,
            max_text_len: 32,
            num_prompts: 5,
            use_vpt: true,
            init_std: 0.02,
            prompt_init_std: 0.02,
            ln_eps: 1e-5,
        }
    }
}

/// Dual encoder with face projector. All tensors live in `store`.
#[derive(Debug, Clone)]
pub struct IdClipModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub text: TextEncoderParams,
    pub visual: VisualEncoderParams,
    pub projector: FaceProjector,
    pub vocab: Vocabulary,
}

impl IdClipModel {
    /// Model over the built-in vocabulary.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        Self::with_vocab(config, Vocabulary::builtin(), seed)
    }

    /// `config.vocab_size` is overwritten with the vocabulary length.
    pub fn with_vocab(mut config: ModelConfig, vocab: Vocabulary, seed: u64) -> Self {
        config.vocab_size = vocab.len();
        let mut store = ParamStore::new();
        let mut rng = seed::rng(seed, "model-init", &[]);
        let text = TextEncoderParams::init(&mut store, &config, &mut rng);
        let visual = VisualEncoderParams::init(&mut store, &config, &mut rng);
        let projector = FaceProjector::init(&mut store, &config, &mut rng);
        Self {
            config,
            store,
            text,
            visual,
            projector,
            vocab,
        }
    }

    /// Text and visual backbone weights, i.e. everything frozen during
    /// identity training.
    pub fn backbone_ids(&self) -> Vec<ParamId> {
        let mut ids = self.text.param_ids();
        ids.extend(self.visual.backbone_ids());
        ids
    }

    /// Projector weights plus (when VPT is on) the prompt tokens.
    pub fn identity_ids(&self) -> Vec<ParamId> {
        let mut ids = self.projector.param_ids();
        if self.config.use_vpt && self.config.num_prompts > 0 {
            ids.push(self.visual.prompt_tokens);
        }
        ids
    }

    /// Redraws the projector weights and prompt tokens as a fresh model with
    /// `seed` would have them; the backbone is untouched.
    pub fn reinit_identity(&mut self, seed: u64) {
        let fresh = Self::with_vocab(self.config.clone(), self.vocab.clone(), seed);
        let pairs = [
            (self.projector.w1, fresh.projector.w1),
            (self.projector.w2, fresh.projector.w2),
            (self.visual.prompt_tokens, fresh.visual.prompt_tokens),
        ];
        for (mine, theirs) in pairs {
            let data = fresh.store.get(theirs).data().to_vec();
            self.store.get_mut(mine).data_mut().copy_from_slice(&data);
        }
    }

    /// Unit-norm image embedding, no gradients.
    pub fn embed_image(&self, patches: &Tensor) -> Result<Vec<f64>, EncoderError> {
        let mut tape = Tape::new();
        let x = tape.constant(patches.clone());
        let out = encode_image(&mut tape, &self.store, &self.visual, x, self.config.use_vpt)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Face feature to token embedding, no gradients.
    pub fn project_face(&self, face: &[f64]) -> Result<Vec<f64>, EncoderError> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, face.len()], face.to_vec())?);
        let out = project_face(&mut tape, &self.store, &self.projector, x)?;
        Ok(tape.value(out).data().to_vec())
    }
}
