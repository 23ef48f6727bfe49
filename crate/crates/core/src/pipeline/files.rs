//! Dataset on disk: the JSON-lines manifest plus a tensor sidecar holding
//! the rendered patches, the in-image face features and the gallery faces.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::{Container, Section};
use super::{read_file, write_file, PipelineError};
use crate::datagen::{Dataset, DatasetManifest, RenderSpec, GRID_PATCHES};
use crate::query::FaceGallery;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 8] = *b"IDCLIPDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    manifest_hash: String,
    render: RenderSpec,
}

/// `data/manifest.jsonl` → `data/manifest.bin`.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn encode_tensors(data: &Dataset, gallery: &FaceGallery) -> Result<Vec<u8>, PipelineError> {
    let m = &data.manifest;
    let n = data.patches.len();
    let pp = data.render.patch_pixels;
    let d = data.render.d_face;
    let patches = data.patches.iter().flat_map(|t| t.data().iter().copied()).collect();
    let faces = data.faces.iter().flatten().copied().collect();
    let mut gallery_faces = Vec::with_capacity(m.gallery_names.len() * d);
    for g in &m.gallery_names {
        gallery_faces.extend_from_slice(gallery.lookup_face(&g.name)?);
    }
    let header = Header {
        manifest_hash: m.hash(),
        render: data.render,
    };
    Ok(Container {
        magic: DATASET_MAGIC,
        version: DATASET_VERSION,
        header: serde_json::to_string(&header).expect("header serializes"),
        sections: vec![
            Section::new("patches", vec![n, GRID_PATCHES, pp], false, patches),
            Section::new("faces", vec![n, d], false, faces),
            Section::new("gallery", vec![m.gallery_names.len(), d], false, gallery_faces),
        ],
    }
    .encode())
}

pub fn decode_tensors(manifest: DatasetManifest, bytes: &[u8]) -> Result<(Dataset, FaceGallery), PipelineError> {
    let c = Container::decode(bytes, &DATASET_MAGIC, DATASET_VERSION)?;
    let header: Header =
        serde_json::from_str(&c.header).map_err(|e| PipelineError::Format(format!("tensor header: {e}")))?;
    if header.manifest_hash != manifest.hash() {
        return Err(PipelineError::Format("tensor file belongs to a different manifest".into()));
    }
    let n = manifest.images.len();
    let g = manifest.gallery_names.len();
    let pp = header.render.patch_pixels;
    let d = header.render.d_face;
    let expect = |name: &str, shape: Vec<usize>| -> Result<Vec<f64>, PipelineError> {
        let s = c.section(name)?;
        if s.shape != shape {
            return Err(PipelineError::Format(format!("section {name}: shape {:?}, expected {shape:?}", s.shape)));
        }
        Ok(s.data.clone())
    };
    let patches = expect("patches", vec![n, GRID_PATCHES, pp])?;
    let faces = expect("faces", vec![n, d])?;
    let gallery_faces = expect("gallery", vec![g, d])?;
    let patches = patches
        .chunks(GRID_PATCHES * pp)
        .map(|c| Tensor::new(vec![GRID_PATCHES, pp], c.to_vec()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::Format(e.to_string()))?;
    let faces = faces.chunks(d).map(<[f64]>::to_vec).collect();
    let mut gallery = FaceGallery::new();
    for (rec, face) in manifest.gallery_names.iter().zip(gallery_faces.chunks(d)) {
        gallery.insert(rec.name.clone(), rec.identity_id, face.to_vec())?;
    }
    Ok((
        Dataset {
            manifest,
            render: header.render,
            patches,
            faces,
        },
        gallery,
    ))
}

pub fn save_dataset(manifest_path: &Path, data: &Dataset, gallery: &FaceGallery) -> Result<(), PipelineError> {
    write_file(manifest_path, data.manifest.to_jsonl().as_bytes())?;
    write_file(&sidecar_path(manifest_path), &encode_tensors(data, gallery)?)
}

pub fn load_dataset(manifest_path: &Path) -> Result<(Dataset, FaceGallery), PipelineError> {
    let text = String::from_utf8(read_file(manifest_path)?)
        .map_err(|_| PipelineError::Format(format!("{} is not UTF-8", manifest_path.display())))?;
    let manifest = DatasetManifest::from_jsonl(&text)?;
    decode_tensors(manifest, &read_file(&sidecar_path(manifest_path))?)
}
