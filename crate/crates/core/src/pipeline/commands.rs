use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::files::{load_dataset, save_dataset, sidecar_path};
use super::{write_file, PipelineError, RunConfig};
use crate::datagen::{generate_dataset, generate_gallery, validate_manifest, Dataset, Split, ValidationReport};
use crate::encoders::IdClipModel;
use crate::eval::{
    embed_split, evaluate_context_retrieval, evaluate_entity_in_context, evaluate_entity_only, top_k, MetricsReport,
    Task, TemplatePolicy,
};
use crate::query::{
    compose_query, encode_slots, surface_words, AnonymizedCaption, CompoundQuery, ExpansionStrategy, FaceGallery, Slot,
    ENTITY,
};
use crate::tensor::{ParamId, Tape};
use crate::train::{Phase, Trainer};

pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const BEST_FILE: &str = "idclip_best.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_log.jsonl";
pub const IDCLIP_LOG: &str = "idclip_log.jsonl";

pub fn epoch_file(epoch: usize) -> String {
    format!("idclip_epoch{epoch:02}.ckpt")
}

#[derive(Debug, Clone)]
pub struct GenOutput {
    pub manifest: PathBuf,
    pub tensors: PathBuf,
    pub report: ValidationReport,
}

/// Generates the dataset of `cfg.data` and writes the manifest and its
/// tensor sidecar. A dataset that fails validation is not written.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenOutput, PipelineError> {
    cfg.check()?;
    let d = &cfg.data;
    let (gallery, table) = generate_gallery(d.num_identities, d.d_face, d.face_jitter, d.seed)?;
    let data = generate_dataset(d, &gallery, &table)?;
    let report = validate_manifest(&data.manifest);
    if !report.is_clean() {
        let names: Vec<_> = report.invariants().into_iter().collect();
        return Err(PipelineError::Data(crate::datagen::DataError::Constraint(names.join(", "))));
    }
    save_dataset(&cfg.paths.manifest, &data, &gallery)?;
    Ok(GenOutput {
        manifest: cfg.paths.manifest.clone(),
        tensors: sidecar_path(&cfg.paths.manifest),
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    Pretrain,
    Idclip,
    /// Pretrain, then the identity phase on the fresh backbone.
    All,
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Context retrieval R@1 on val (pretraining).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_context_r1: Option<f64>,
    /// Entity-in-context Rsum on val with `[TOK]` (identity phase).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_rsum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub files: Vec<PathBuf>,
    pub best_epoch: Option<usize>,
}

pub(crate) fn load_checked(cfg: &RunConfig) -> Result<(Dataset, FaceGallery), PipelineError> {
    let (data, gallery) = load_dataset(&cfg.paths.manifest)?;
    let report = validate_manifest(&data.manifest);
    if !report.is_clean() {
        let names: Vec<_> = report.invariants().into_iter().collect();
        return Err(PipelineError::Format(format!("manifest fails validation: {}", names.join(", "))));
    }
    if data.render.d_face != cfg.model.d_face || data.render.patch_pixels != cfg.model.patch_pixels {
        return Err(PipelineError::Config(format!(
            "dataset has d_face {} and patch_pixels {}; the model expects {} and {}",
            data.render.d_face, data.render.patch_pixels, cfg.model.d_face, cfg.model.patch_pixels
        )));
    }
    Ok((data, gallery))
}

/// The model without prompt tokens, i.e. the frozen backbone alone.
fn without_prompts(model: &IdClipModel) -> IdClipModel {
    let mut m = model.clone();
    m.config.use_vpt = false;
    m
}

fn val_context_r1(model: &IdClipModel, data: &Dataset, policy: TemplatePolicy) -> Result<f64, PipelineError> {
    let m = without_prompts(model);
    let val = embed_split(&m, &data.manifest, &data.patches, Split::Val)?;
    Ok(evaluate_context_retrieval(&m, &data.manifest, &val, policy)?.recall[&1])
}

fn val_rsum(model: &IdClipModel, data: &Dataset, gallery: &FaceGallery, policy: TemplatePolicy) -> Result<f64, PipelineError> {
    let val = embed_split(model, &data.manifest, &data.patches, Split::Val)?;
    Ok(evaluate_entity_in_context(model, &data.manifest, &val, gallery, ExpansionStrategy::TokOnly, policy)?.rsum)
}

/// Trains the backbone from scratch. Initialization and sampling follow
/// `cfg.pretrain.seed`, not the run seed, so runs that differ only in their
/// seed share one backbone.
pub fn pretrain(
    cfg: &RunConfig,
    data: &Dataset,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(IdClipModel, Vec<ParamId>, Vec<EpochRecord>), PipelineError> {
    let tc = cfg.train_config(Phase::BackbonePretrain);
    let mut model = IdClipModel::new(cfg.model.clone(), tc.seed);
    let mut trainer = Trainer::new(&mut model, tc)?;
    let mut records = Vec::new();
    for _ in 0..trainer.config.max_epochs {
        let s = trainer.train_epoch(&mut model, data)?;
        let rec = EpochRecord {
            phase: Phase::BackbonePretrain,
            epoch: s.epoch,
            mean_loss: s.mean_loss,
            val_context_r1: Some(val_context_r1(&model, data, cfg.eval.selection_policy)?),
            val_rsum: None,
        };
        progress(&rec);
        records.push(rec);
    }
    Ok((model, trainer.partition.trainable.clone(), records))
}

/// The backbone with the run's projector and prompt initialization.
pub fn identity_init(cfg: &RunConfig, backbone: &IdClipModel) -> Result<IdClipModel, PipelineError> {
    let mut expected = cfg.model.clone();
    expected.vocab_size = backbone.config.vocab_size;
    expected.use_vpt = backbone.config.use_vpt;
    if expected != backbone.config {
        return Err(PipelineError::Config("backbone checkpoint was built for a different model config".into()));
    }
    let mut model = backbone.clone();
    model.config.use_vpt = cfg.model.use_vpt;
    model.reinit_identity(cfg.seed);
    Ok(model)
}

pub struct IdclipRun {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: IdClipModel,
    pub trainable: Vec<ParamId>,
}

/// Identity phase on top of `backbone`. `on_epoch` sees the model after
/// every epoch; the epoch with the highest validation Rsum wins (earliest on
/// ties).
pub fn fit_idclip(
    cfg: &RunConfig,
    backbone: &IdClipModel,
    data: &Dataset,
    gallery: &FaceGallery,
    on_epoch: &mut dyn FnMut(&IdClipModel, &EpochRecord) -> Result<(), PipelineError>,
) -> Result<IdclipRun, PipelineError> {
    let tc = cfg.train_config(Phase::Idclip);
    if tc.max_epochs == 0 {
        return Err(PipelineError::Config("idclip.max_epochs must be at least 1".into()));
    }
    let mut model = identity_init(cfg, backbone)?;
    let mut trainer = Trainer::new(&mut model, tc)?;
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, IdClipModel)> = None;
    for _ in 0..trainer.config.max_epochs {
        let s = trainer.train_epoch(&mut model, data)?;
        let rsum = val_rsum(&model, data, gallery, cfg.eval.selection_policy)?;
        let rec = EpochRecord {
            phase: Phase::Idclip,
            epoch: s.epoch,
            mean_loss: s.mean_loss,
            val_context_r1: None,
            val_rsum: Some(rsum),
        };
        on_epoch(&model, &rec)?;
        records.push(rec);
        if best.as_ref().is_none_or(|b| rsum > b.1) {
            best = Some((s.epoch, rsum, model.clone()));
        }
    }
    let (best_epoch, _, best) = best.expect("at least one epoch");
    Ok(IdclipRun {
        records,
        best_epoch,
        best,
        trainable: trainer.partition.trainable.clone(),
    })
}

fn jsonl(records: &[EpochRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

/// Runs the requested phases. Pretraining writes `backbone.ckpt`; the
/// identity phase reads it (or `backbone`), writes one checkpoint per epoch
/// and copies the best one to `idclip_best.ckpt`. `progress` sees each
/// epoch as it finishes.
pub fn cmd_train(
    cfg: &RunConfig,
    phase: TrainPhase,
    backbone: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutput, PipelineError> {
    cfg.check()?;
    let (data, gallery) = load_checked(cfg)?;
    let run = &cfg.paths.run_dir;
    let hash = cfg.hash();
    let mut files = Vec::new();
    let mut trained = None;
    if phase != TrainPhase::Idclip {
        let (model, trainable, records) = pretrain(cfg, &data, progress)?;
        let ckpt = Checkpoint::from_model(&model, &trainable, &hash, Phase::BackbonePretrain, records.len());
        let path = run.join(BACKBONE_FILE);
        ckpt.save(&path)?;
        files.push(path);
        let log = run.join(PRETRAIN_LOG);
        write_file(&log, jsonl(&records).as_bytes())?;
        files.push(log);
        trained = Some(model);
    }
    if phase == TrainPhase::Pretrain {
        return Ok(TrainOutput { files, best_epoch: None });
    }
    let backbone = match trained {
        Some(m) => m,
        None => {
            let path = backbone.map_or_else(|| run.join(BACKBONE_FILE), Path::to_path_buf);
            if !path.exists() {
                return Err(PipelineError::Dependency(format!(
                    "backbone checkpoint {} not found; run the pretrain phase first",
                    path.display()
                )));
            }
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.phase != Phase::BackbonePretrain {
                return Err(PipelineError::Dependency(format!("{} is not a backbone checkpoint", path.display())));
            }
            ckpt.to_model()?
        }
    };
    let mut epoch_files = Vec::new();
    let mut on_epoch = |model: &IdClipModel, rec: &EpochRecord| -> Result<(), PipelineError> {
        let trainable = model.identity_ids();
        let path = run.join(epoch_file(rec.epoch));
        Checkpoint::from_model(model, &trainable, &hash, Phase::Idclip, rec.epoch).save(&path)?;
        epoch_files.push(path);
        progress(rec);
        Ok(())
    };
    let fit = fit_idclip(cfg, &backbone, &data, &gallery, &mut on_epoch)?;
    files.extend(epoch_files);
    let best = run.join(BEST_FILE);
    Checkpoint::from_model(&fit.best, &fit.trainable, &hash, Phase::Idclip, fit.best_epoch).save(&best)?;
    files.push(best);
    let log = run.join(IDCLIP_LOG);
    let summary = serde_json::json!({ "best_epoch": fit.best_epoch });
    write_file(&log, (jsonl(&fit.records) + &summary.to_string() + "\n").as_bytes())?;
    files.push(log);
    Ok(TrainOutput {
        files,
        best_epoch: Some(fit.best_epoch),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    /// Directory receiving `reports.json` and `reports.csv`.
    pub out_dir: PathBuf,
}

/// Every report requested by `cfg.eval` for one model. Strategies without a
/// face token, and context retrieval, run on the backbone without prompts:
/// names-only retrieval is the plain dual-encoder baseline.
pub fn evaluate_all(
    cfg: &RunConfig,
    model: &IdClipModel,
    data: &Dataset,
    gallery: &FaceGallery,
) -> Result<Vec<MetricsReport>, PipelineError> {
    let e = &cfg.eval;
    let m = &data.manifest;
    let plain = without_prompts(model);
    let with_face = embed_split(model, m, &data.patches, e.split)?;
    let without_face = embed_split(&plain, m, &data.patches, e.split)?;
    let pick = |s: ExpansionStrategy| if s.uses_face() { (model, &with_face) } else { (&plain, &without_face) };
    let mut out = Vec::new();
    for &task in &e.tasks {
        match task {
            Task::EntityInContext => {
                for &s in &e.strategies {
                    let (mm, images) = pick(s);
                    for &p in &e.template_policies {
                        out.push(evaluate_entity_in_context(mm, m, images, gallery, s, p)?);
                    }
                }
            }
            Task::EntityOnly => {
                for &s in &e.strategies {
                    let (mm, images) = pick(s);
                    out.push(evaluate_entity_only(mm, m, images, gallery, s, &e.entity_prompts)?);
                }
            }
            Task::ContextRetrieval => {
                for &p in &e.template_policies {
                    out.push(evaluate_context_retrieval(&plain, m, &without_face, p)?);
                }
            }
        }
    }
    let hash = cfg.hash();
    Ok(out.into_iter().map(|r| r.with_provenance(cfg.seed, &hash)).collect())
}

pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(MetricsReport::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn cmd_eval(cfg: &RunConfig, req: &EvalRequest) -> Result<Vec<MetricsReport>, PipelineError> {
    cfg.check()?;
    let (data, gallery) = load_checked(cfg)?;
    let model = Checkpoint::load(&req.checkpoint)?.to_model()?;
    let reports = evaluate_all(cfg, &model, &data, &gallery)?;
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n";
    write_file(&req.out_dir.join("reports.json"), json.as_bytes())?;
    write_file(&req.out_dir.join("reports.csv"), reports_csv(&reports).as_bytes())?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRequest {
    pub checkpoint: PathBuf,
    /// Caption with one `[ENTITY]`; plain text is allowed for the name strategy.
    pub query: String,
    pub name: String,
    pub strategy: ExpansionStrategy,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub rank: usize,
    pub image_id: u32,
    pub context_id: u32,
    pub identity_id: u32,
    pub similarity: f64,
}

/// Ranks `model` over the images of `split` for one query; at most `k` hits.
pub fn search(
    model: &IdClipModel,
    data: &Dataset,
    gallery: &FaceGallery,
    split: Split,
    req: &SearchRequest,
) -> Result<Vec<SearchHit>, PipelineError> {
    let plain;
    let model = if req.strategy.uses_face() {
        model
    } else {
        plain = without_prompts(model);
        &plain
    };
    let q = if req.query.contains(ENTITY) {
        gallery.lookup_face(&req.name)?;
        let query = CompoundQuery {
            caption: AnonymizedCaption::new(req.query.as_str(), 1)?,
            name: req.name.clone(),
            strategy: req.strategy,
        };
        compose_query(&query, gallery, model)?
    } else if req.strategy == ExpansionStrategy::NameOnly {
        let slots: Vec<Slot> = surface_words(&req.query).into_iter().map(Slot::Word).collect();
        let mut tape = Tape::new();
        let v = encode_slots(&mut tape, model, &slots, None)?;
        tape.value(v).data().to_vec()
    } else {
        return Err(PipelineError::Config(format!(
            "query must contain {ENTITY} unless the strategy is {}",
            ExpansionStrategy::NameOnly.cli_name()
        )));
    };
    let images = embed_split(model, &data.manifest, &data.patches, split)?;
    let ranked = top_k(&q, &images.index, req.k)?;
    let records: BTreeMap<u32, _> = data.manifest.images.iter().map(|i| (i.image_id, i)).collect();
    Ok(ranked
        .image_ids
        .iter()
        .zip(&ranked.similarities)
        .enumerate()
        .map(|(r, (id, &similarity))| SearchHit {
            rank: r + 1,
            image_id: *id,
            context_id: records[id].context_id,
            identity_id: records[id].identity_id,
            similarity,
        })
        .collect())
}

/// Top-k listing over the images of `cfg.eval.split`.
pub fn cmd_search(cfg: &RunConfig, req: &SearchRequest) -> Result<Vec<SearchHit>, PipelineError> {
    cfg.check()?;
    let (data, gallery) = load_checked(cfg)?;
    let model = Checkpoint::load(&req.checkpoint)?.to_model()?;
    search(&model, &data, &gallery, cfg.eval.split, req)
}
