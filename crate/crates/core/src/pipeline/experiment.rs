//! VPT on/off comparison over several identity-phase seeds sharing one
//! pretrained backbone.

use serde::{Deserialize, Serialize};

use super::commands::fit_idclip;
use super::{PipelineError, RunConfig};
use crate::datagen::{Dataset, Split};
use crate::encoders::IdClipModel;
use crate::eval::{embed_split, evaluate_entity_in_context, evaluate_entity_only, relevant_for_identity, TemplatePolicy};
use crate::query::{ExpansionStrategy, FaceGallery};

/// Test-split numbers of the best-on-val epoch of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub best_epoch: usize,
    pub val_rsum: f64,
    /// Entity-in-context Rsum, `[TOK]`, T1.
    pub test_rsum: f64,
    pub test_r1: f64,
    /// Entity-only R@1 with `[TOK]`.
    pub entity_only_r1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub vpt_on: VariantResult,
    pub vpt_off: VariantResult,
    /// Entity-in-context R@1 with names only on the bare backbone.
    pub name_only_r1: f64,
    /// Expected entity-only R@1 of a random ranking, in percent.
    pub entity_chance: f64,
}

/// Mean over the identities queried on `split` of
/// `|images of identity| / |split|`, in percent.
pub fn entity_chance(data: &Dataset, split: Split) -> f64 {
    let m = &data.manifest;
    let n = m.images_in(split).count() as f64;
    let rates: Vec<f64> = m
        .gallery_names
        .iter()
        .map(|g| relevant_for_identity(m, split, g.identity_id).len() as f64)
        .filter(|&c| c > 0.0)
        .map(|c| c / n)
        .collect();
    100.0 * rates.iter().sum::<f64>() / rates.len() as f64
}

fn variant(
    cfg: &RunConfig,
    backbone: &IdClipModel,
    data: &Dataset,
    gallery: &FaceGallery,
    use_vpt: bool,
) -> Result<VariantResult, PipelineError> {
    let mut cfg = cfg.clone();
    cfg.model.use_vpt = use_vpt;
    let fit = fit_idclip(&cfg, backbone, data, gallery, &mut |_, _| Ok(()))?;
    let m = &data.manifest;
    let test = embed_split(&fit.best, m, &data.patches, Split::Test)?;
    let t1 = TemplatePolicy::Single(1);
    let eic = evaluate_entity_in_context(&fit.best, m, &test, gallery, ExpansionStrategy::TokOnly, t1)?;
    let eo = evaluate_entity_only(&fit.best, m, &test, gallery, ExpansionStrategy::TokOnly, &cfg.eval.entity_prompts)?;
    Ok(VariantResult {
        best_epoch: fit.best_epoch,
        val_rsum: fit.records[fit.best_epoch - 1].val_rsum.expect("identity records carry val rsum"),
        test_rsum: eic.rsum,
        test_r1: eic.recall[&1],
        entity_only_r1: eo.recall[&1],
    })
}

/// Trains the identity phase with and without VPT for each seed on top of
/// `backbone` and reports both on the test split.
pub fn run_vpt_comparison(
    cfg: &RunConfig,
    backbone: &IdClipModel,
    data: &Dataset,
    gallery: &FaceGallery,
    seeds: &[u64],
) -> Result<Vec<SeedOutcome>, PipelineError> {
    let m = &data.manifest;
    let mut plain = backbone.clone();
    plain.config.use_vpt = false;
    let test = embed_split(&plain, m, &data.patches, Split::Test)?;
    let name_only =
        evaluate_entity_in_context(&plain, m, &test, gallery, ExpansionStrategy::NameOnly, TemplatePolicy::Single(1))?;
    let chance = entity_chance(data, Split::Test);
    seeds
        .iter()
        .map(|&seed| {
            let cfg = RunConfig { seed, ..cfg.clone() };
            Ok(SeedOutcome {
                seed,
                vpt_on: variant(&cfg, backbone, data, gallery, true)?,
                vpt_off: variant(&cfg, backbone, data, gallery, false)?,
                name_only_r1: name_only.recall[&1],
                entity_chance: chance,
            })
        })
        .collect()
}
