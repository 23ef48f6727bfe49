use super::expand::{expand_entity, AnonymizedCaption, ExpansionStrategy, Slot};
use super::{FaceGallery, QueryError};
use crate::encoders::{encode_text, project_face, IdClipModel};
use crate::tensor::{kernels, Tape, Tensor, Var};

/// Anonymized caption plus the entity to resolve through the gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundQuery {
    pub caption: AnonymizedCaption,
    pub name: String,
    pub strategy: ExpansionStrategy,
}

/// Records `<bos> slots <eos>` as a `[L × d_tok]` embedding sequence, with
/// `face_token` spliced at the `Tok` slot.
pub fn embed_slots(
    tape: &mut Tape,
    model: &IdClipModel,
    slots: &[Slot],
    face_token: Option<Var>,
) -> Result<Var, QueryError> {
    let vocab = &model.vocab;
    let mut pieces = Vec::new();
    let mut run = vec![vocab.bos()];
    for slot in slots {
        match slot {
            Slot::Word(w) => run.push(vocab.id(w)),
            Slot::Tok => {
                let tok = face_token.ok_or(QueryError::MissingFace)?;
                if !run.is_empty() {
                    pieces.push(model.text.embed_words(tape, &model.store, &run)?);
                    run.clear();
                }
                pieces.push(tok);
            }
        }
    }
    run.push(vocab.eos());
    pieces.push(model.text.embed_words(tape, &model.store, &run)?);
    Ok(tape.concat_rows(&pieces)?)
}

/// Encodes an expanded caption. `face` is projected into the `[TOK]` slot
/// when the sequence has one.
pub fn encode_slots(tape: &mut Tape, model: &IdClipModel, slots: &[Slot], face: Option<Var>) -> Result<Var, QueryError> {
    let face_token = match face {
        Some(f) if slots.contains(&Slot::Tok) => Some(project_face(tape, &model.store, &model.projector, f)?),
        _ => None,
    };
    let seq = embed_slots(tape, model, slots, face_token)?;
    Ok(encode_text(tape, &model.store, &model.text, seq)?)
}

fn encode_value(model: &IdClipModel, slots: &[Slot], face: Option<&[f64]>) -> Result<Vec<f64>, QueryError> {
    let mut tape = Tape::new();
    let face = match face {
        Some(f) => Some(tape.constant(Tensor::new(vec![1, f.len()], f.to_vec())?)),
        None => None,
    };
    let out = encode_slots(&mut tape, model, slots, face)?;
    Ok(tape.value(out).data().to_vec())
}

/// Unit-norm caption embedding for a compound query.
pub fn compose_query(query: &CompoundQuery, gallery: &FaceGallery, model: &IdClipModel) -> Result<Vec<f64>, QueryError> {
    let slots = expand_entity(&query.caption, query.strategy, &query.name);
    let face = if query.strategy.uses_face() {
        Some(gallery.lookup_face(&query.name)?)
    } else {
        None
    };
    encode_value(model, &slots, face)
}

/// Averages the embeddings of `name` rendered through each prompt template,
/// then renormalizes.
pub fn ensemble_prompts(
    name: &str,
    strategy: ExpansionStrategy,
    templates: &[String],
    gallery: &FaceGallery,
    model: &IdClipModel,
) -> Result<Vec<f64>, QueryError> {
    if templates.is_empty() {
        return Err(QueryError::EmptyTemplates);
    }
    let mut sum = vec![0.0; model.config.d_embed];
    for (i, t) in templates.iter().enumerate() {
        let query = CompoundQuery {
            caption: AnonymizedCaption::new(t.clone(), i as u32 + 1)?,
            name: name.to_string(),
            strategy,
        };
        let e = compose_query(&query, gallery, model)?;
        sum.iter_mut().zip(&e).for_each(|(s, v)| *s += v);
    }
    let n = templates.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
    Ok(kernels::normalized(&mean))
}
