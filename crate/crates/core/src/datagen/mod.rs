//! Synthetic person-in-context dataset: contexts × swapped identities,
//! templated captions, context-disjoint splits, and the manifest format.

mod generate;
pub mod grammar;
mod manifest;
mod template;

pub use generate::{
    generate_dataset, generate_gallery, identity_name, render_context, render_dataset, Dataset, DatasetConfig, RenderSpec,
    FACE_PATCHES, GALLERY_FACE_SEED, GRID_PATCHES,
};
pub use manifest::{
    validate_manifest, CaptionRecord, ContextSpec, Counts, DatasetManifest, GalleryName, ImageRecord, Split,
    ValidationReport, Violation, FORMAT_VERSION,
};
pub use template::{apply_template, TemplatedCaption};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DataError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("manifest parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

#[cfg(test)]
mod tests;
