//! Query composition: `[ENTITY]` expansion, tokenization, face lookup and
//! prompt ensembling.

mod compose;
mod expand;
mod gallery;
mod tokenizer;

pub use compose::{compose_query, embed_slots, encode_slots, ensemble_prompts, CompoundQuery};
pub use expand::{detokenize, expand_entity, AnonymizedCaption, ExpansionStrategy, Slot, ENTITY, TOK};
pub use gallery::{FaceGallery, GalleryEntry};
pub use tokenizer::{surface_words, Vocabulary};

use crate::encoders::EncoderError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QueryError {
    #[error("malformed caption: {0}")]
    Format(String),
    #[error("name {0:?} is not in the face gallery")]
    GalleryMiss(String),
    #[error("duplicate gallery name {0:?}")]
    DuplicateName(String),
    #[error("prompt template list is empty")]
    EmptyTemplates,
    #[error("caption has a [TOK] slot but no face was supplied")]
    MissingFace,
    #[error(transparent)]
    Encoder(EncoderError),
}

impl From<TensorError> for QueryError {
    fn from(e: TensorError) -> Self {
        QueryError::Encoder(EncoderError::Tensor(e))
    }
}
