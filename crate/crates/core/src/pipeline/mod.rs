//! Run configuration, on-disk formats and the gen / train / eval / search
//! commands.

mod checkpoint;
mod commands;
mod container;
pub mod experiment;
mod files;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use commands::{
    cmd_eval, cmd_gen, cmd_search, cmd_train, epoch_file, evaluate_all, fit_idclip, identity_init, pretrain,
    reports_csv, search, EpochRecord, EvalRequest, GenOutput, IdclipRun, SearchHit, SearchRequest, TrainOutput,
    TrainPhase, BACKBONE_FILE, BEST_FILE, IDCLIP_LOG, PRETRAIN_LOG,
};
pub use container::{Container, Section};
pub use files::{decode_tensors, encode_tensors, load_dataset, save_dataset, sidecar_path, DATASET_MAGIC, DATASET_VERSION};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{grammar, DataError, DatasetConfig, Split};
use crate::encoders::{EncoderError, ModelConfig};
use crate::eval::{EvalError, Task, TemplatePolicy};
use crate::query::{ExpansionStrategy, QueryError};
use crate::train::{Phase, PretrainText, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

impl PipelineError {
    /// 2 config/constraint, 3 data, 4 version.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Version { .. } | PipelineError::Data(DataError::Version { .. }) => 4,
            PipelineError::Data(DataError::Config(_) | DataError::Constraint(_)) => 2,
            PipelineError::Train(TrainError::Usage(_)) | PipelineError::Eval(EvalError::Usage(_)) => 2,
            _ => 3,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: Split,
    pub tasks: Vec<Task>,
    pub strategies: Vec<ExpansionStrategy>,
    pub template_policies: Vec<TemplatePolicy>,
    pub entity_prompts: Vec<String>,
    /// Template set behind the validation Rsum that picks the best epoch.
    pub selection_policy: TemplatePolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            tasks: vec![Task::EntityInContext, Task::EntityOnly],
            strategies: vec![ExpansionStrategy::TokOnly, ExpansionStrategy::NameOnly],
            template_policies: vec![TemplatePolicy::Single(1), TemplatePolicy::AllTemplatesAvg],
            entity_prompts: grammar::DEFAULT_ENTITY_PROMPTS.iter().map(|s| s.to_string()).collect(),
            selection_policy: TemplatePolicy::Single(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Manifest JSON-lines file; tensors live next to it with extension `.bin`.
    pub manifest: PathBuf,
    /// Checkpoints, training logs and reports.
    pub run_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/manifest.jsonl"),
            run_dir: PathBuf::from("runs"),
        }
    }
}

/// Everything a run depends on. `seed` drives the identity phase; the
/// dataset and the backbone have their own seeds in `data` and `pretrain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DatasetConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub idclip: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DatasetConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig {
                phase: Phase::BackbonePretrain,
                learning_rate: 1e-3,
                max_epochs: 200,
                logit_scale: 10.0,
                contexts_per_group: 0,
                pretrain_text: PretrainText::Appearance,
                pretrain_portraits: 1,
                ..TrainConfig::default()
            },
            idclip: TrainConfig {
                phase: Phase::Idclip,
                learning_rate: 1e-3,
                max_epochs: 10,
                logit_scale: 30.0,
                contexts_per_group: 4,
                prompt_warmup_epochs: 3,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a possibly partial config. Fields are merged onto
    /// `RunConfig::default()` at every depth, so `{"idclip":{"max_epochs":5}}`
    /// keeps the other identity-phase defaults.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let bad = |e: serde_json::Error| PipelineError::Config(format!("config: {e}"));
        let user: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        if !user.is_object() {
            return Err(PipelineError::Config("config: expected a JSON object".into()));
        }
        let mut merged = serde_json::to_value(Self::default()).expect("config serializes");
        merge(&mut merged, user);
        let c: Self = serde_json::from_value(merged).map_err(bad)?;
        c.check()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        self.data.check()?;
        if self.pretrain.phase != Phase::BackbonePretrain || self.idclip.phase != Phase::Idclip {
            return Err(PipelineError::Config("pretrain/idclip sections must name their own phase".into()));
        }
        self.pretrain.check()?;
        self.idclip.check()?;
        let m = &self.model;
        if m.d_face != self.data.d_face || m.patch_pixels != self.data.patch_pixels || m.num_patches != crate::datagen::GRID_PATCHES {
            return Err(PipelineError::Config(format!(
                "model expects d_face {}, patch_pixels {}, {} patches; data has {}, {}, {}",
                m.d_face,
                m.patch_pixels,
                m.num_patches,
                self.data.d_face,
                self.data.patch_pixels,
                crate::datagen::GRID_PATCHES
            )));
        }
        if self.eval.entity_prompts.is_empty() {
            return Err(PipelineError::Config("eval.entity_prompts is empty".into()));
        }
        Ok(())
    }

    /// Training configuration of a phase. The identity phase takes the run
    /// seed; pretraining keeps `pretrain.seed` so one backbone serves every
    /// run seed.
    pub fn train_config(&self, phase: Phase) -> TrainConfig {
        match phase {
            Phase::BackbonePretrain => self.pretrain.clone(),
            Phase::Idclip => TrainConfig {
                seed: self.seed,
                ..self.idclip.clone()
            },
        }
    }

    /// SHA-256 (hex, 16 chars) of the canonical JSON without `paths`, so a
    /// run moved to another directory keeps its hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("paths");
        }
        let digest = Sha256::digest(serde_json::to_string(&v).expect("value serializes").as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Objects merge key by key; anything else replaces the base value.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests;
