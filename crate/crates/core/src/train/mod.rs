//! Contrastive training: the backbone pretraining phase and the identity
//! phase in which only the face projector and visual prompts learn.

mod adam;
mod loss;

pub use adam::Adam;
pub use loss::{info_nce, info_nce_from_sims};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::grammar::{appearance_phrase, portrait_caption};
use crate::datagen::{apply_template, ContextSpec, DataError, Dataset, Split};
use crate::encoders::{encode_image, EncoderError, IdClipModel};
use crate::query::{encode_slots, expand_entity, surface_words, AnonymizedCaption, ExpansionStrategy, QueryError, Slot};
use crate::seed;
use crate::tensor::{ParamId, Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Encoder(EncoderError::Tensor(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BackbonePretrain,
    Idclip,
}

/// How backbone pretraining captions refer to the pictured person.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainText {
    /// `[ENTITY]` is dropped; images show the dataset's own faces.
    DropEntity,
    /// Images show fresh random faces, named by their appearance words.
    Appearance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub symmetric_loss: bool,
    /// Constant multiplier on cosine logits; 1.0 is the bare cosine loss.
    pub logit_scale: f64,
    /// When nonzero, samples are ordered so that each stretch of batches
    /// draws from only this many contexts. Same-context pairs differ only in
    /// the person, which is what the loss must learn to tell apart.
    pub contexts_per_group: usize,
    /// Learning-rate multiplier for the visual prompt tokens.
    pub prompt_lr_scale: f64,
    /// Epochs at the start of the identity phase during which the prompt
    /// tokens stay fixed and only the projector learns.
    pub prompt_warmup_epochs: usize,
    pub pretrain_text: PretrainText,
    /// Portraits per train image and epoch added to appearance pretraining.
    pub pretrain_portraits: usize,
    pub phase: Phase,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            max_epochs: 10,
            seed: 0,
            symmetric_loss: false,
            logit_scale: 10.0,
            contexts_per_group: 4,
            prompt_lr_scale: 1.0,
            prompt_warmup_epochs: 0,
            pretrain_text: PretrainText::Appearance,
            pretrain_portraits: 1,
            phase: Phase::Idclip,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Usage(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate >= 0.0) || !(self.logit_scale > 0.0) || !(self.prompt_lr_scale >= 0.0) {
            return Err(TrainError::Usage("learning_rate and prompt_lr_scale must be >= 0 and logit_scale > 0".into()));
        }
        Ok(())
    }
}

/// Which handles learn in a phase. The two sets are disjoint and cover the
/// store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPartition {
    pub trainable: Vec<ParamId>,
    pub frozen: Vec<ParamId>,
}

impl ParamPartition {
    pub fn for_phase(model: &IdClipModel, phase: Phase) -> Self {
        let trainable = match phase {
            Phase::BackbonePretrain => model.backbone_ids(),
            Phase::Idclip => model.identity_ids(),
        };
        let set: BTreeSet<ParamId> = trainable.iter().copied().collect();
        let frozen = model.store.ids().filter(|id| !set.contains(id)).collect();
        Self { trainable, frozen }
    }

    /// Sets `requires_grad` to match the partition.
    pub fn apply(&self, model: &mut IdClipModel) {
        for &id in &self.trainable {
            model.store.set_requires_grad(id, true);
        }
        for &id in &self.frozen {
            model.store.set_requires_grad(id, false);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub samples: usize,
}

/// Image side of a training pair.
#[derive(Debug, Clone, PartialEq)]
enum Picture {
    Stored(usize),
    /// Rendered for this sample only.
    Fresh(Tensor),
}

/// Text side of a training pair.
#[derive(Debug, Clone, PartialEq)]
enum Text {
    /// Index into the manifest captions. With `face` the entity becomes a
    /// face token taken from that image; without it the entity is dropped.
    Caption { caption: usize, face: Option<usize> },
    Plain(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Sample {
    picture: Picture,
    text: Text,
    key: (u32, u32),
    /// Context the sample is grouped under.
    context: u32,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub partition: ParamPartition,
    adam: Adam,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(model: &mut IdClipModel, config: TrainConfig) -> Result<Self, TrainError> {
        config.check()?;
        let partition = ParamPartition::for_phase(model, config.phase);
        partition.apply(model);
        let adam = Adam::new(
            &model.store,
            &partition.trainable,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
        Ok(Self {
            config,
            partition,
            adam,
            epochs_done: 0,
        })
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    fn uses_prompts(&self, model: &IdClipModel) -> bool {
        self.config.phase == Phase::Idclip && model.config.use_vpt
    }

    /// One pair per (train image, stem), each with a uniformly drawn template.
    ///
    /// Pretraining shows a fresh random face in place of the pictured person
    /// and names it by its appearance words, so the backbone learns to see
    /// faces without meeting any gallery identity.
    fn samples(&self, data: &Dataset, epoch: usize) -> Result<Vec<Sample>, TrainError> {
        let m = &data.manifest;
        let k = m.templates.len() as u32;
        let mut index: BTreeMap<(u32, u32, u32), usize> = BTreeMap::new();
        for (i, c) in m.captions.iter().enumerate() {
            index.insert((c.image_id, c.stem_index, c.template_id), i);
        }
        let contexts: BTreeMap<u32, &ContextSpec> = m.contexts.iter().map(|c| (c.context_id, c)).collect();
        let mut rng = seed::rng(self.config.seed, "train-samples", &[self.config.phase as u64, epoch as u64]);
        let mut out = Vec::new();
        for img in m.images_in(Split::Train) {
            let ctx = *contexts
                .get(&img.context_id)
                .ok_or_else(|| DataError::Constraint(format!("unknown_context: {}", img.context_id)))?;
            for (stem_index, stem) in ctx.caption_stems.iter().enumerate() {
                let t = rng.random_range(1..=k);
                let stored = |face: bool| -> Result<Sample, TrainError> {
                    let caption = *index
                        .get(&(img.image_id, stem_index as u32, t))
                        .ok_or_else(|| DataError::Constraint(format!("caption_count: image {} lacks a caption", img.image_id)))?;
                    let image = img.image_id as usize;
                    Ok(Sample {
                        picture: Picture::Stored(image),
                        text: Text::Caption {
                            caption,
                            face: face.then_some(image),
                        },
                        key: (img.context_id, if face { img.identity_id } else { 0 }),
                        context: img.context_id,
                    })
                };
                let sample = match (self.config.phase, self.config.pretrain_text) {
                    (Phase::BackbonePretrain, PretrainText::DropEntity) => stored(false)?,
                    (Phase::BackbonePretrain, PretrainText::Appearance) => {
                        let idx = [self.config.seed, epoch as u64, u64::from(img.image_id), stem_index as u64];
                        let face = data.render.random_face("pretrain-face", &idx);
                        let attrs = data.render.appearance(&face);
                        let text = apply_template(&m.templates[t as usize - 1], stem, &appearance_phrase(&attrs))?.named;
                        let face_seed = seed::derive(self.config.seed, "pretrain-face-seed", &idx);
                        Sample {
                            picture: Picture::Fresh(data.render.render(ctx, &face, face_seed)),
                            text: Text::Plain(text),
                            key: (img.context_id, code_of(&attrs)),
                            context: img.context_id,
                        }
                    }
                    (Phase::Idclip, _) => stored(true)?,
                };
                out.push(sample);
            }
            if (self.config.phase, self.config.pretrain_text) == (Phase::BackbonePretrain, PretrainText::Appearance) {
                for p in 0..self.config.pretrain_portraits {
                    let idx = [self.config.seed, epoch as u64, u64::from(img.image_id), p as u64];
                    let face = data.render.random_face("portrait-face", &idx);
                    let attrs = data.render.appearance(&face);
                    out.push(Sample {
                        picture: Picture::Fresh(data.render.render_portrait(&face, seed::derive(self.config.seed, "portrait-face-seed", &idx))),
                        text: Text::Plain(portrait_caption(&appearance_phrase(&attrs))),
                        key: (u32::MAX, code_of(&attrs)),
                        context: img.context_id,
                    });
                }
            }
        }
        if out.is_empty() {
            return Err(TrainError::Usage("train split is empty".into()));
        }
        out.shuffle(&mut rng);
        if self.config.contexts_per_group > 0 {
            let mut order: Vec<u32> = contexts.keys().copied().collect();
            order.shuffle(&mut rng);
            let g = self.config.contexts_per_group;
            let group: BTreeMap<u32, usize> = order.into_iter().enumerate().map(|(r, c)| (c, r / g)).collect();
            out.sort_by_key(|s| group[&s.context]);
        }
        Ok(out)
    }

    /// Greedy batching in shuffled order; no two samples in a batch share a
    /// collision key. Trailing batches with fewer than two samples are dropped.
    fn batches(&self, samples: Vec<Sample>) -> Vec<Vec<Sample>> {
        let mut pending = samples;
        let mut out = Vec::new();
        while !pending.is_empty() {
            let mut keys = BTreeSet::new();
            let mut batch = Vec::new();
            let mut rest = Vec::new();
            for s in pending {
                if batch.len() < self.config.batch_size && keys.insert(s.key) {
                    batch.push(s);
                } else {
                    rest.push(s);
                }
            }
            pending = rest;
            if batch.len() >= 2 {
                out.push(batch);
            }
        }
        out
    }

    /// Records the text side of one sample.
    fn encode_text(&self, tape: &mut Tape, model: &IdClipModel, data: &Dataset, s: &Sample) -> Result<Var, TrainError> {
        match &s.text {
            Text::Plain(text) => {
                let slots: Vec<Slot> = surface_words(text).into_iter().map(Slot::Word).collect();
                Ok(encode_slots(tape, model, &slots, None)?)
            }
            Text::Caption { caption, face: None } => {
                let c = &data.manifest.captions[*caption];
                let caption = AnonymizedCaption::new(c.text.as_str(), c.template_id)?;
                let slots = expand_entity(&caption, ExpansionStrategy::NameOnly, "");
                Ok(encode_slots(tape, model, &slots, None)?)
            }
            Text::Caption { caption, face: Some(face) } => {
                let c = &data.manifest.captions[*caption];
                let caption = AnonymizedCaption::new(c.text.as_str(), c.template_id)?;
                let slots = expand_entity(&caption, ExpansionStrategy::TokOnly, &c.entity);
                let f = &data.faces[*face];
                let face = tape.constant(Tensor::new(vec![1, f.len()], f.clone())?);
                Ok(encode_slots(tape, model, &slots, Some(face))?)
            }
        }
    }

    /// Loss of one batch, recorded on `tape`.
    fn batch_loss(&self, tape: &mut Tape, model: &IdClipModel, data: &Dataset, batch: &[Sample]) -> Result<Var, TrainError> {
        let prompts = self.uses_prompts(model);
        let mut texts = Vec::with_capacity(batch.len());
        let mut images = Vec::with_capacity(batch.len());
        for s in batch {
            texts.push(self.encode_text(tape, model, data, s)?);
            let patches = match &s.picture {
                Picture::Stored(i) => tape.constant(data.patches[*i].clone()),
                Picture::Fresh(t) => tape.constant(t.clone()),
            };
            images.push(encode_image(tape, &model.store, &model.visual, patches, prompts)?);
        }
        let c = tape.concat_rows(&texts)?;
        let v = tape.concat_rows(&images)?;
        info_nce(tape, c, v, self.config.logit_scale, self.config.symmetric_loss)
    }

    pub fn train_epoch(&mut self, model: &mut IdClipModel, data: &Dataset) -> Result<EpochStats, TrainError> {
        let epoch = self.epochs_done + 1;
        let samples = self.samples(data, epoch)?;
        let n = samples.len();
        let batches = self.batches(samples);
        let prompts = model.visual.prompt_tokens;
        if self.adam.tracks(prompts) {
            let warm = epoch <= self.config.prompt_warmup_epochs;
            self.adam.set_lr_scale(prompts, if warm { 0.0 } else { self.config.prompt_lr_scale });
        }
        let mut total = 0.0;
        for batch in &batches {
            model.store.zero_grads();
            let mut tape = Tape::new();
            let loss = self.batch_loss(&mut tape, model, data, batch)?;
            total += tape.value(loss).data()[0];
            let grads = tape.backward(loss)?;
            grads.accumulate_into(&mut model.store);
            self.adam.step(&mut model.store);
        }
        model.store.zero_grads();
        self.epochs_done = epoch;
        Ok(EpochStats {
            epoch,
            mean_loss: if batches.is_empty() { f64::NAN } else { total / batches.len() as f64 },
            batches: batches.len(),
            samples: n,
        })
    }

    /// Loss on a fixed batch without updating anything; used by gradient checks.
    pub fn loss_on(&self, tape: &mut Tape, model: &IdClipModel, data: &Dataset, images: &[usize]) -> Result<Var, TrainError> {
        let m = &data.manifest;
        let batch: Vec<Sample> = images
            .iter()
            .map(|&i| {
                let caption = m
                    .captions
                    .iter()
                    .position(|c| c.image_id as usize == i && c.template_id == 1)
                    .ok_or_else(|| TrainError::Usage(format!("image {i} has no T1 caption")))?;
                Ok(Sample {
                    picture: Picture::Stored(i),
                    text: Text::Caption { caption, face: Some(i) },
                    key: (0, 0),
                    context: 0,
                })
            })
            .collect::<Result<_, TrainError>>()?;
        self.batch_loss(tape, model, data, &batch)
    }
}

fn code_of(attrs: &[bool]) -> u32 {
    attrs.iter().fold(0, |acc, &b| acc << 1 | u32::from(b))
}

/// Trains the text and visual backbones on captions that describe the person
/// by appearance only.
pub fn pretrain_backbone(model: &mut IdClipModel, data: &Dataset, config: &TrainConfig) -> Result<Vec<EpochStats>, TrainError> {
    let config = TrainConfig {
        phase: Phase::BackbonePretrain,
        ..config.clone()
    };
    let mut trainer = Trainer::new(model, config)?;
    (0..trainer.config.max_epochs).map(|_| trainer.train_epoch(model, data)).collect()
}
