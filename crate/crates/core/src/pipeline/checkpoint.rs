use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{Container, Section};
use super::{read_file, write_file, PipelineError};
use crate::encoders::{IdClipModel, ModelConfig};
use crate::query::Vocabulary;
use crate::tensor::ParamId;
use crate::train::Phase;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"IDCLIPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config_hash: String,
    phase: Phase,
    epoch: usize,
    model_config: ModelConfig,
    vocab: Vocabulary,
}

/// Model weights plus what is needed to rebuild the model around them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    /// Phase that produced the weights.
    pub phase: Phase,
    pub epoch: usize,
    pub model_config: ModelConfig,
    pub vocab: Vocabulary,
    /// One section per store tensor, in store order.
    pub sections: Vec<Section>,
}

impl Checkpoint {
    /// Snapshot of `model`; tensors in `trainable` are flagged as such.
    pub fn from_model(model: &IdClipModel, trainable: &[ParamId], config_hash: &str, phase: Phase, epoch: usize) -> Self {
        let trainable: BTreeSet<ParamId> = trainable.iter().copied().collect();
        let sections = model
            .store
            .iter()
            .map(|(id, name, t)| Section::new(name, t.shape().to_vec(), trainable.contains(&id), t.data().to_vec()))
            .collect();
        Self {
            config_hash: config_hash.to_string(),
            phase,
            epoch,
            model_config: model.config.clone(),
            vocab: model.vocab.clone(),
            sections,
        }
    }

    /// Rebuilds the model. Every store tensor must be present with its shape.
    pub fn to_model(&self) -> Result<IdClipModel, PipelineError> {
        let mut model = IdClipModel::with_vocab(self.model_config.clone(), self.vocab.clone(), 0);
        if model.store.len() != self.sections.len() {
            return Err(PipelineError::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                self.sections.len(),
                model.store.len()
            )));
        }
        for s in &self.sections {
            let id = model
                .store
                .id(&s.name)
                .ok_or_else(|| PipelineError::Format(format!("unknown tensor {}", s.name)))?;
            let t = model.store.get_mut(id);
            if t.shape() != s.shape.as_slice() {
                return Err(PipelineError::Format(format!(
                    "tensor {}: shape {:?}, model expects {:?}",
                    s.name,
                    s.shape,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&s.data);
        }
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            config_hash: self.config_hash.clone(),
            phase: self.phase,
            epoch: self.epoch,
            model_config: self.model_config.clone(),
            vocab: self.vocab.clone(),
        };
        Container {
            magic: CHECKPOINT_MAGIC,
            version: CHECKPOINT_VERSION,
            header: serde_json::to_string(&header).expect("header serializes"),
            sections: self.sections.clone(),
        }
        .encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PipelineError> {
        let c = Container::decode(bytes, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let header: Header =
            serde_json::from_str(&c.header).map_err(|e| PipelineError::Format(format!("checkpoint header: {e}")))?;
        Ok(Self {
            config_hash: header.config_hash,
            phase: header.phase,
            epoch: header.epoch,
            model_config: header.model_config,
            vocab: header.vocab.reindexed(),
            sections: c.sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::decode(&read_file(path)?)
    }

    /// Encoded bytes of the frozen sections only, in order.
    pub fn frozen_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in self.sections.iter().filter(|s| !s.trainable) {
            out.extend_from_slice(s.name.as_bytes());
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}
