use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::grammar::{self, ACTIVITIES, OBJECTS, PLACES};
use super::manifest::{
    CaptionRecord, ContextSpec, DatasetManifest, GalleryName, ImageRecord, Split, FORMAT_VERSION,
};
use super::{apply_template, DataError};
use crate::encoders::FaceAnchorTable;
use crate::query::FaceGallery;
use crate::seed;
use crate::tensor::Tensor;

/// Patch grid is 4×4; each cell shows one context attribute or part of the
/// face, which fills the central 2×2 block.
pub const GRID_PATCHES: usize = 16;
pub const FACE_PATCHES: [usize; 4] = [5, 6, 9, 10];
const PLACE_PATCHES: [usize; 8] = [0, 1, 2, 3, 12, 13, 14, 15];
const ACTIVITY_PATCHES: [usize; 2] = [4, 8];
const OBJECT_PATCHES: [usize; 2] = [7, 11];

/// `face_seed` used for the gallery's reference face of every identity.
pub const GALLERY_FACE_SEED: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_identities: usize,
    pub train_contexts: usize,
    pub val_contexts: usize,
    pub test_contexts: usize,
    pub swaps_per_context: usize,
    pub templates: Vec<String>,
    pub d_face: usize,
    pub patch_pixels: usize,
    /// Relative norm of the per-sample face jitter.
    pub face_jitter: f64,
    /// Per-pixel noise std on the face patch.
    pub face_pixel_noise: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_identities: 16,
            train_contexts: 12,
            val_contexts: 3,
            test_contexts: 3,
            swaps_per_context: 4,
            templates: grammar::DEFAULT_TEMPLATES.iter().map(|t| t.to_string()).collect(),
            d_face: 64,
            patch_pixels: 32,
            face_jitter: 0.3,
            face_pixel_noise: 0.1,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn num_contexts(&self) -> usize {
        self.train_contexts + self.val_contexts + self.test_contexts
    }

    fn split_sizes(&self) -> [(Split, usize); 3] {
        [
            (Split::Train, self.train_contexts),
            (Split::Val, self.val_contexts),
            (Split::Test, self.test_contexts),
        ]
    }

    /// Rejects configurations whose balance constraints cannot be met.
    pub fn check(&self) -> Result<(), DataError> {
        if self.num_identities < 2 {
            return Err(DataError::Config(format!(
                "num_identities must be at least 2, got {}",
                self.num_identities
            )));
        }
        if self.templates.is_empty() {
            return Err(DataError::Config("template list is empty".into()));
        }
        if self.d_face == 0 || self.patch_pixels == 0 {
            return Err(DataError::Config("d_face and patch_pixels must be positive".into()));
        }
        if self.swaps_per_context < 2 {
            return Err(DataError::Constraint(format!(
                "swaps_per_context must be at least 2, got {}",
                self.swaps_per_context
            )));
        }
        if self.num_identities < self.swaps_per_context {
            return Err(DataError::Constraint(format!(
                "identity_in_one_context: {} identities cannot fill {} distinct swaps per context",
                self.num_identities, self.swaps_per_context
            )));
        }
        for (split, c) in self.split_sizes() {
            if c == 1 {
                return Err(DataError::Constraint(format!(
                    "identity_in_one_context: split {split} has a single context, so no identity can appear in two"
                )));
            }
        }
        if self.train_contexts == 0 {
            return Err(DataError::Constraint("train split needs at least 2 contexts".into()));
        }
        let available = PLACES.len() * ACTIVITIES.len() * OBJECTS.len();
        if self.num_contexts() > available {
            return Err(DataError::Constraint(format!(
                "duplicate_context: {} contexts requested but the grammar has {available}",
                self.num_contexts()
            )));
        }
        Ok(())
    }
}

/// Everything needed to render a patch grid besides the manifest records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub seed: u64,
    pub d_face: usize,
    pub patch_pixels: usize,
    pub face_pixel_noise: f64,
}

impl RenderSpec {
    pub fn from_config(cfg: &DatasetConfig) -> Self {
        Self {
            seed: cfg.seed,
            d_face: cfg.d_face,
            patch_pixels: cfg.patch_pixels,
            face_pixel_noise: cfg.face_pixel_noise,
        }
    }

    /// Context patches with `face` drawn into the face cell.
    pub fn render(&self, ctx: &ContextSpec, face: &[f64], face_seed: u64) -> Tensor {
        let grid = render_context(ctx, self.patch_pixels, self.seed);
        self.draw_face(grid, face, face_seed)
    }

    /// `face` on a blank background.
    pub fn render_portrait(&self, face: &[f64], face_seed: u64) -> Tensor {
        let grid = Tensor::zeros(&[GRID_PATCHES, self.patch_pixels]);
        self.draw_face(grid, face, face_seed)
    }

    fn draw_face(&self, mut grid: Tensor, face: &[f64], face_seed: u64) -> Tensor {
        let pp = self.patch_pixels;
        let renderer = face_renderer(self.seed, self.d_face, FACE_PATCHES.len() * pp);
        let px = render_face(&renderer, face, FACE_PATCHES.len() * pp, self.face_pixel_noise, self.seed, face_seed);
        for (part, &cell) in px.chunks(pp).zip(&FACE_PATCHES) {
            grid.data_mut()[cell * pp..(cell + 1) * pp].copy_from_slice(part);
        }
        grid
    }

    /// Binary appearance attributes of a face: signs of fixed read-outs of its
    /// noise-free face pixels. Each read-out applies the same weights to every
    /// patch of the face block, so an attribute does not depend on where in
    /// the face it shows.
    pub fn appearance(&self, face: &[f64]) -> Vec<bool> {
        let pp = self.patch_pixels;
        let width = FACE_PATCHES.len() * pp;
        let renderer = face_renderer(self.seed, self.d_face, width);
        let px = render_face(&renderer, face, width, 0.0, self.seed, 0);
        (0..grammar::APPEARANCE.len())
            .map(|j| {
                let w = pattern(self.seed, "appearance", &[j as u64], pp);
                px.chunks(pp)
                    .map(|part| part.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
                    .sum::<f64>()
                    > 0.0
            })
            .collect()
    }

    /// A face of nobody in the gallery: uniform on the unit sphere.
    pub fn random_face(&self, tag: &str, idx: &[u64]) -> Vec<f64> {
        let mut rng = seed::rng(self.seed, tag, idx);
        loop {
            let v: Vec<f64> = (0..self.d_face).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                return v.iter().map(|x| x / n).collect();
            }
        }
    }
}

/// Manifest plus rendered tensors, indexed by `image_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub render: RenderSpec,
    /// `[GRID_PATCHES × patch_pixels]` per image.
    pub patches: Vec<Tensor>,
    /// Face feature of the person shown in each image.
    pub faces: Vec<Vec<f64>>,
}

pub fn identity_name(identity: u32) -> String {
    format!("person_{:04}", identity + 1)
}

/// Synthetic face gallery with names `person_0001…`.
pub fn generate_gallery(
    num_identities: usize,
    d_face: usize,
    face_jitter: f64,
    seed: u64,
) -> Result<(FaceGallery, FaceAnchorTable), DataError> {
    if num_identities < 2 {
        return Err(DataError::Config(format!(
            "num_identities must be at least 2, got {num_identities}"
        )));
    }
    let ids = 0..num_identities as u32;
    let table = FaceAnchorTable::generate(ids.clone(), d_face, face_jitter, seed);
    let names = ids.map(|i| (identity_name(i), i));
    let gallery = FaceGallery::from_table(names, &table, GALLERY_FACE_SEED).map_err(|e| DataError::Config(e.to_string()))?;
    Ok((gallery, table))
}

fn pattern(seed: u64, tag: &str, idx: &[u64], len: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed, tag, idx);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Renders a context's attribute patches; the face block is left at zero.
pub fn render_context(ctx: &ContextSpec, patch_pixels: usize, seed: u64) -> Tensor {
    let mut t = Tensor::zeros(&[GRID_PATCHES, patch_pixels]);
    let mut put = |cell: usize, tag: &str, value: u32| {
        let p = pattern(seed, tag, &[u64::from(value), cell as u64], patch_pixels);
        t.data_mut()[cell * patch_pixels..(cell + 1) * patch_pixels].copy_from_slice(&p);
    };
    PLACE_PATCHES.iter().for_each(|&c| put(c, "place", ctx.place));
    ACTIVITY_PATCHES.iter().for_each(|&c| put(c, "activity", ctx.activity));
    OBJECT_PATCHES.iter().for_each(|&c| put(c, "object", ctx.object));
    t
}

/// Fixed linear "renderer" from face space to pixels, `[d_face × width]`.
fn face_renderer(seed: u64, d_face: usize, width: usize) -> Vec<f64> {
    pattern(seed, "face-render", &[], d_face * width)
}

fn render_face(renderer: &[f64], face: &[f64], width: usize, noise: f64, seed: u64, face_seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for (i, f) in face.iter().enumerate() {
        for (o, r) in out.iter_mut().zip(&renderer[i * width..(i + 1) * width]) {
            *o += f * r;
        }
    }
    if noise > 0.0 {
        let mut rng = seed::rng(seed, "face-pixel-noise", &[face_seed]);
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *o += noise * z;
        }
    }
    out
}

/// Round-robin identity assignment for one split: slot `j` of `n` gets
/// `subset[j % m_s]`. With `s ≤ m_s ≤ n/2` every identity in the subset fills
/// at least two slots, and its slots are `m_s ≥ s` apart, hence in distinct
/// contexts.
fn assign_identities(cfg: &DatasetConfig, split: Split, contexts: usize) -> Vec<u32> {
    let n = contexts * cfg.swaps_per_context;
    let m_s = cfg.num_identities.min(n / 2);
    let mut ids: Vec<u32> = (0..cfg.num_identities as u32).collect();
    ids.shuffle(&mut seed::rng(cfg.seed, "identity-subset", &[split as u64]));
    ids.truncate(m_s);
    (0..n).map(|j| ids[j % m_s]).collect()
}

/// Generates the manifest and tensors. Every record derives from
/// `(cfg.seed, record index)`.
pub fn generate_dataset(cfg: &DatasetConfig, gallery: &FaceGallery, table: &FaceAnchorTable) -> Result<Dataset, DataError> {
    cfg.check()?;
    if table.d_face != cfg.d_face {
        return Err(DataError::Config(format!(
            "face table has d_face {} but the config asks for {}",
            table.d_face, cfg.d_face
        )));
    }
    let mut gallery_names = Vec::with_capacity(cfg.num_identities);
    for id in 0..cfg.num_identities as u32 {
        let name = gallery
            .name_of(id)
            .ok_or_else(|| DataError::Constraint(format!("unknown_identity: identity {id} missing from gallery")))?;
        table.anchor(id).map_err(|e| DataError::Constraint(format!("unknown_identity: {e}")))?;
        gallery_names.push(GalleryName {
            identity_id: id,
            name: name.to_string(),
        });
    }

    let mut triples: Vec<(u32, u32, u32)> = Vec::new();
    for p in 0..PLACES.len() as u32 {
        for a in 0..ACTIVITIES.len() as u32 {
            for o in 0..OBJECTS.len() as u32 {
                triples.push((p, a, o));
            }
        }
    }
    triples.shuffle(&mut seed::rng(cfg.seed, "contexts", &[]));

    let spec = RenderSpec::from_config(cfg);
    let mut contexts = Vec::new();
    let mut images = Vec::new();
    let mut captions = Vec::new();
    let mut patches = Vec::new();
    let mut faces = Vec::new();
    let mut next_triple = triples.into_iter();
    for (split, count) in cfg.split_sizes() {
        if count == 0 {
            continue;
        }
        let assignment = assign_identities(cfg, split, count);
        for c in 0..count {
            let (place, activity, object) = next_triple.next().expect("checked against grammar size");
            let ctx = ContextSpec {
                context_id: contexts.len() as u32,
                place,
                activity,
                object,
                caption_stems: grammar::stems(place as usize, activity as usize, object as usize),
            };
            for s in 0..cfg.swaps_per_context {
                let identity_id = assignment[c * cfg.swaps_per_context + s];
                let image_id = images.len() as u32;
                let face_seed = seed::derive(cfg.seed, "image", &[u64::from(image_id)]);
                let face = table.face_features(identity_id, face_seed).expect("identity checked above");
                let grid = spec.render(&ctx, &face, face_seed);
                let name = &gallery_names[identity_id as usize].name;
                for (si, stem) in ctx.caption_stems.iter().enumerate() {
                    for (ti, template) in cfg.templates.iter().enumerate() {
                        let rendered = apply_template(template, stem, name)?;
                        captions.push(CaptionRecord {
                            image_id,
                            stem_index: si as u32,
                            template_id: ti as u32 + 1,
                            text: rendered.anonymized,
                            entity: name.clone(),
                        });
                    }
                }
                images.push(ImageRecord {
                    image_id,
                    context_id: ctx.context_id,
                    identity_id,
                    split,
                    face_seed,
                    path: None,
                });
                patches.push(grid);
                faces.push(face);
            }
            contexts.push(ctx);
        }
    }

    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            seed: cfg.seed,
            templates: cfg.templates.clone(),
            gallery_names,
            contexts,
            images,
            captions,
        },
        render: spec,
        patches,
        faces,
    })
}

/// Re-renders tensors for a manifest (e.g. after loading it from disk).
pub fn render_dataset(manifest: &DatasetManifest, table: &FaceAnchorTable, spec: &RenderSpec) -> Result<Dataset, DataError> {
    if spec.seed != manifest.seed || spec.d_face != table.d_face {
        return Err(DataError::Config("render spec does not match the manifest seed or face table".into()));
    }
    let mut patches = Vec::with_capacity(manifest.images.len());
    let mut faces = Vec::with_capacity(manifest.images.len());
    for (i, img) in manifest.images.iter().enumerate() {
        if img.image_id as usize != i {
            return Err(DataError::Constraint(format!("image ids must be 0..n in order, found {} at {i}", img.image_id)));
        }
        let ctx = manifest
            .contexts
            .iter()
            .find(|c| c.context_id == img.context_id)
            .ok_or_else(|| DataError::Constraint(format!("unknown_context: {}", img.context_id)))?;
        let face = table
            .face_features(img.identity_id, img.face_seed)
            .map_err(|e| DataError::Constraint(format!("unknown_identity: {e}")))?;
        patches.push(spec.render(ctx, &face, img.face_seed));
        faces.push(face);
    }
    Ok(Dataset {
        manifest: manifest.clone(),
        render: *spec,
        patches,
        faces,
    })
}
