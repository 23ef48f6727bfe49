//! Identity-aware cross-modal retrieval at desk scale.

pub mod datagen;
pub mod encoders;
pub mod eval;
pub mod pipeline;
pub mod query;
pub mod seed;
pub mod tensor;
pub mod train;

pub use datagen::{Dataset, DatasetConfig, DatasetManifest, Split};
pub use encoders::{IdClipModel, ModelConfig};
pub use eval::{MetricsReport, Task, TemplatePolicy};
pub use pipeline::{Checkpoint, PipelineError, RunConfig};
pub use query::{ExpansionStrategy, FaceGallery};
pub use train::{Phase, TrainConfig};
