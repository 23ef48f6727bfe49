//! Ranking, recall@k / Rsum, and the two retrieval tasks.

mod rank;

pub use rank::{rank_images, recall_at_k, rsum, top_k, ImageIndex, RankedList, RECALL_KS};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetManifest, Split};
use crate::encoders::{EncoderError, IdClipModel};
use crate::query::{
    compose_query, ensemble_prompts, AnonymizedCaption, CompoundQuery, ExpansionStrategy, FaceGallery, QueryError,
};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Anything that embeds images and compound queries into one space.
pub trait RetrievalModel: Sync {
    fn embed_image(&self, patches: &Tensor) -> Result<Vec<f64>, EvalError>;
    fn embed_query(&self, query: &CompoundQuery, gallery: &FaceGallery) -> Result<Vec<f64>, EvalError>;
    fn embed_entity(
        &self,
        name: &str,
        strategy: ExpansionStrategy,
        prompts: &[String],
        gallery: &FaceGallery,
    ) -> Result<Vec<f64>, EvalError>;
}

impl RetrievalModel for IdClipModel {
    fn embed_image(&self, patches: &Tensor) -> Result<Vec<f64>, EvalError> {
        Ok(IdClipModel::embed_image(self, patches)?)
    }

    fn embed_query(&self, query: &CompoundQuery, gallery: &FaceGallery) -> Result<Vec<f64>, EvalError> {
        Ok(compose_query(query, gallery, self)?)
    }

    fn embed_entity(
        &self,
        name: &str,
        strategy: ExpansionStrategy,
        prompts: &[String],
        gallery: &FaceGallery,
    ) -> Result<Vec<f64>, EvalError> {
        Ok(ensemble_prompts(name, strategy, prompts, gallery, self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    EntityInContext,
    EntityOnly,
    /// Caption with the entity dropped; every image of the caption's context
    /// is relevant. Measures the backbone alone.
    ContextRetrieval,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::EntityInContext => "entity_in_context",
            Task::EntityOnly => "entity_only",
            Task::ContextRetrieval => "context_retrieval",
        })
    }
}

/// Which caption templates form the query set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplatePolicy {
    /// Only captions of one template (1 = T1).
    Single(u32),
    /// Per-template recall, then the arithmetic mean across templates.
    AllTemplatesAvg,
}

impl fmt::Display for TemplatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplatePolicy::Single(t) => write!(f, "single_t{t}"),
            TemplatePolicy::AllTemplatesAvg => f.write_str("all_templates_avg"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub strategy: ExpansionStrategy,
    /// `None` for entity-only reports.
    pub template_policy: Option<TemplatePolicy>,
    pub split: Split,
    /// Percentage points keyed by k.
    pub recall: BTreeMap<usize, f64>,
    pub rsum: f64,
    pub num_queries: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Queries that could not be formed (gallery misses, absent identities).
    pub notes: Vec<String>,
}

impl MetricsReport {
    fn new(task: Task, strategy: ExpansionStrategy, policy: Option<TemplatePolicy>, split: Split, recall: BTreeMap<usize, f64>, num_queries: usize, notes: Vec<String>) -> Result<Self, EvalError> {
        let rsum = rsum(&recall)?;
        Ok(Self {
            task,
            strategy,
            template_policy: policy,
            split,
            recall,
            rsum,
            num_queries,
            seed: 0,
            config_hash: String::new(),
            notes,
        })
    }

    pub fn with_provenance(mut self, seed: u64, config_hash: &str) -> Self {
        self.seed = seed;
        self.config_hash = config_hash.to_string();
        self
    }

    pub const CSV_HEADER: &'static str = "task,strategy,template_policy,split,r1,r5,r10,r50,rsum,queries";

    pub fn csv_row(&self) -> String {
        let policy = self.template_policy.map_or("-".to_string(), |p| p.to_string());
        format!(
            "{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{}",
            self.task, self.strategy, policy, self.split, self.recall[&1], self.recall[&5], self.recall[&10], self.recall[&50], self.rsum, self.num_queries
        )
    }
}

/// Splits' images with their embeddings, computed once per evaluation.
pub struct SplitImages {
    pub split: Split,
    pub index: ImageIndex,
}

/// Thread pool honoring `IDCLIP_THREADS`.
fn pool() -> rayon::ThreadPool {
    let threads = std::env::var("IDCLIP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

pub fn embed_split<M: RetrievalModel>(
    model: &M,
    manifest: &DatasetManifest,
    patches: &[Tensor],
    split: Split,
) -> Result<SplitImages, EvalError> {
    let ids: Vec<u32> = manifest.images_in(split).map(|i| i.image_id).collect();
    if ids.is_empty() {
        return Err(EvalError::Usage(format!("split {split} has no images")));
    }
    let embeddings = pool().install(|| {
        ids.par_iter()
            .map(|&id| model.embed_image(&patches[id as usize]))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(SplitImages {
        split,
        index: ImageIndex::new(ids, embeddings)?,
    })
}

/// Relevant set of a caption query: its source image.
pub fn relevant_for_caption(image_id: u32) -> BTreeSet<u32> {
    BTreeSet::from([image_id])
}

/// Relevant set of an entity-only query: every split image of the identity.
pub fn relevant_for_identity(manifest: &DatasetManifest, split: Split, identity: u32) -> BTreeSet<u32> {
    manifest
        .images_in(split)
        .filter(|i| i.identity_id == identity)
        .map(|i| i.image_id)
        .collect()
}

fn recalls_of(ranked: &RankedList, relevant: &BTreeSet<u32>) -> Result<[f64; 4], EvalError> {
    let mut out = [0.0; 4];
    for (o, &k) in out.iter_mut().zip(&RECALL_KS) {
        *o = recall_at_k(ranked, relevant, k)?;
    }
    Ok(out)
}

/// Mean of per-query recall rows, in percentage points. Summation runs in
/// query order for bit stability.
fn mean_percent(rows: &[[f64; 4]]) -> BTreeMap<usize, f64> {
    RECALL_KS
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let s = rows.iter().fold(0.0, |a, r| a + r[j]);
            let mean = if rows.is_empty() { 0.0 } else { s / rows.len() as f64 };
            (k, 100.0 * mean)
        })
        .collect()
}

/// Per-k arithmetic mean of per-template recall tables.
fn average(per_template: &[BTreeMap<usize, f64>]) -> BTreeMap<usize, f64> {
    RECALL_KS
        .iter()
        .map(|&key| {
            let s = per_template.iter().fold(0.0, |a, r| a + r[&key]);
            (key, s / per_template.len() as f64)
        })
        .collect()
}

type QueryOutcome = Result<[f64; 4], String>;

fn caption_queries<M: RetrievalModel>(
    model: &M,
    manifest: &DatasetManifest,
    images: &SplitImages,
    gallery: &FaceGallery,
    strategy: ExpansionStrategy,
    template: u32,
) -> Result<Vec<QueryOutcome>, EvalError> {
    let in_split: BTreeSet<u32> = images.index.ids.iter().copied().collect();
    let captions: Vec<_> = manifest
        .captions
        .iter()
        .filter(|c| c.template_id == template && in_split.contains(&c.image_id))
        .collect();
    pool().install(|| {
        captions
            .par_iter()
            .map(|c| -> Result<QueryOutcome, EvalError> {
                let query = CompoundQuery {
                    caption: AnonymizedCaption::new(c.text.as_str(), c.template_id)?,
                    name: c.entity.clone(),
                    strategy,
                };
                match model.embed_query(&query, gallery) {
                    Ok(q) => {
                        let ranked = rank_images(&q, &images.index)?;
                        Ok(Ok(recalls_of(&ranked, &relevant_for_caption(c.image_id))?))
                    }
                    Err(EvalError::Query(e @ QueryError::GalleryMiss(_))) => {
                        Ok(Err(format!("image {} template {}: {e}", c.image_id, c.template_id)))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect()
    })
}

fn split_outcomes(outcomes: Vec<QueryOutcome>, notes: &mut Vec<String>) -> Vec<[f64; 4]> {
    let mut rows = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(n) => notes.push(n),
        }
    }
    rows
}

/// Each caption is a query whose only relevant image is its source.
pub fn evaluate_entity_in_context<M: RetrievalModel>(
    model: &M,
    manifest: &DatasetManifest,
    images: &SplitImages,
    gallery: &FaceGallery,
    strategy: ExpansionStrategy,
    policy: TemplatePolicy,
) -> Result<MetricsReport, EvalError> {
    let k = manifest.templates.len() as u32;
    let mut notes = Vec::new();
    let (recall, n) = match policy {
        TemplatePolicy::Single(t) => {
            if t == 0 || t > k {
                return Err(EvalError::Usage(format!("template {t} out of range 1..={k}")));
            }
            let rows = split_outcomes(caption_queries(model, manifest, images, gallery, strategy, t)?, &mut notes);
            (mean_percent(&rows), rows.len())
        }
        TemplatePolicy::AllTemplatesAvg => {
            let mut per_template = Vec::new();
            let mut n = 0;
            for t in 1..=k {
                let rows = split_outcomes(caption_queries(model, manifest, images, gallery, strategy, t)?, &mut notes);
                n += rows.len();
                per_template.push(mean_percent(&rows));
            }
            (average(&per_template), n)
        }
    };
    MetricsReport::new(Task::EntityInContext, strategy, Some(policy), images.split, recall, n, notes)
}

/// Relevant set of a context query: every split image of the context.
pub fn relevant_for_context(manifest: &DatasetManifest, split: Split, context: u32) -> BTreeSet<u32> {
    manifest
        .images_in(split)
        .filter(|i| i.context_id == context)
        .map(|i| i.image_id)
        .collect()
}

fn context_rows<M: RetrievalModel>(
    model: &M,
    manifest: &DatasetManifest,
    images: &SplitImages,
    template: u32,
) -> Result<Vec<[f64; 4]>, EvalError> {
    let context_of: BTreeMap<u32, u32> = manifest.images_in(images.split).map(|i| (i.image_id, i.context_id)).collect();
    let captions: Vec<_> = manifest
        .captions
        .iter()
        .filter(|c| c.template_id == template && context_of.contains_key(&c.image_id))
        .collect();
    let empty = FaceGallery::new();
    pool().install(|| {
        captions
            .par_iter()
            .map(|c| -> Result<[f64; 4], EvalError> {
                let query = CompoundQuery {
                    caption: AnonymizedCaption::new(c.text.as_str(), c.template_id)?,
                    name: String::new(),
                    strategy: ExpansionStrategy::NameOnly,
                };
                let q = model.embed_query(&query, &empty)?;
                let relevant = relevant_for_context(manifest, images.split, context_of[&c.image_id]);
                recalls_of(&rank_images(&q, &images.index)?, &relevant)
            })
            .collect()
    })
}

/// Captions with `[ENTITY]` dropped, ranked against the split; relevant =
/// all images sharing the caption's context.
pub fn evaluate_context_retrieval<M: RetrievalModel>(
    model: &M,
    manifest: &DatasetManifest,
    images: &SplitImages,
    policy: TemplatePolicy,
) -> Result<MetricsReport, EvalError> {
    let k = manifest.templates.len() as u32;
    let (recall, n) = match policy {
        TemplatePolicy::Single(t) => {
            if t == 0 || t > k {
                return Err(EvalError::Usage(format!("template {t} out of range 1..={k}")));
            }
            let rows = context_rows(model, manifest, images, t)?;
            (mean_percent(&rows), rows.len())
        }
        TemplatePolicy::AllTemplatesAvg => {
            let mut per_template = Vec::new();
            let mut n = 0;
            for t in 1..=k {
                let rows = context_rows(model, manifest, images, t)?;
                n += rows.len();
                per_template.push(mean_percent(&rows));
            }
            (average(&per_template), n)
        }
    };
    MetricsReport::new(Task::ContextRetrieval, ExpansionStrategy::NameOnly, Some(policy), images.split, recall, n, Vec::new())
}

/// One query per gallery identity present in the split; all of its split
/// images are relevant.
pub fn evaluate_entity_only<M: RetrievalModel>(
    model: &M,
    manifest: &DatasetManifest,
    images: &SplitImages,
    gallery: &FaceGallery,
    strategy: ExpansionStrategy,
    prompts: &[String],
) -> Result<MetricsReport, EvalError> {
    let mut notes = Vec::new();
    let mut queries = Vec::new();
    for g in &manifest.gallery_names {
        let relevant = relevant_for_identity(manifest, images.split, g.identity_id);
        if relevant.is_empty() {
            notes.push(format!("{} has no images in {}", g.name, images.split));
            continue;
        }
        queries.push((g.name.clone(), relevant));
    }
    let outcomes: Vec<QueryOutcome> = pool().install(|| {
        queries
            .par_iter()
            .map(|(name, relevant)| -> Result<QueryOutcome, EvalError> {
                match model.embed_entity(name, strategy, prompts, gallery) {
                    Ok(q) => Ok(Ok(recalls_of(&rank_images(&q, &images.index)?, relevant)?)),
                    Err(EvalError::Query(e @ QueryError::GalleryMiss(_))) => Ok(Err(e.to_string())),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_, _>>()
    })?;
    let rows = split_outcomes(outcomes, &mut notes);
    MetricsReport::new(Task::EntityOnly, strategy, None, images.split, mean_percent(&rows), rows.len(), notes)
}

#[cfg(test)]
mod tests;
