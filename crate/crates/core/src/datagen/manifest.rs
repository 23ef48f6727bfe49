use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;
use crate::query::ENTITY;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryName {
    pub identity_id: u32,
    pub name: String,
}

/// A scene. `place`/`activity`/`object` index the grammar tables and select
/// the visual patterns rendered into the patch grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub context_id: u32,
    pub place: u32,
    pub activity: u32,
    pub object: u32,
    pub caption_stems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u32,
    pub context_id: u32,
    pub identity_id: u32,
    pub split: Split,
    /// Seed of this image's face sample and face-patch noise.
    pub face_seed: u64,
    /// Reserved for real image files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: u32,
    pub stem_index: u32,
    /// 1-based, so template 1 is T1.
    pub template_id: u32,
    pub text: String,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub templates: Vec<String>,
    pub gallery_names: Vec<GalleryName>,
    pub contexts: Vec<ContextSpec>,
    pub images: Vec<ImageRecord>,
    pub captions: Vec<CaptionRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub identities: usize,
    pub contexts: usize,
    pub images: usize,
    pub captions: usize,
    pub templates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    seed: u64,
    counts: Counts,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Template { template_id: u32, text: String },
    Identity(GalleryName),
    Context(ContextSpec),
    Image(ImageRecord),
    Caption(CaptionRecord),
}

impl DatasetManifest {
    pub fn counts(&self) -> Counts {
        Counts {
            identities: self.gallery_names.len(),
            contexts: self.contexts.len(),
            images: self.images.len(),
            captions: self.captions.len(),
            templates: self.templates.len(),
        }
    }

    /// Image ids per split, in manifest order.
    pub fn splits(&self) -> BTreeMap<Split, Vec<u32>> {
        let mut out: BTreeMap<Split, Vec<u32>> = Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
        for img in &self.images {
            out.entry(img.split).or_default().push(img.image_id);
        }
        out
    }

    pub fn images_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |i| i.split == split)
    }

    pub fn name_of(&self, identity: u32) -> Option<&str> {
        self.gallery_names
            .iter()
            .find(|g| g.identity_id == identity)
            .map(|g| g.name.as_str())
    }

    /// JSON-lines: a header object, then one record per line.
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format_version: self.format_version,
            seed: self.seed,
            counts: self.counts(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        let mut push = |r: Record| {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        };
        for (i, t) in self.templates.iter().enumerate() {
            push(Record::Template {
                template_id: i as u32 + 1,
                text: t.clone(),
            });
        }
        self.gallery_names.iter().cloned().for_each(|g| push(Record::Identity(g)));
        self.contexts.iter().cloned().for_each(|c| push(Record::Context(c)));
        self.images.iter().cloned().for_each(|i| push(Record::Image(i)));
        self.captions.iter().cloned().for_each(|c| push(Record::Caption(c)));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| DataError::Parse {
            line: 1,
            message: "empty manifest".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format_version != FORMAT_VERSION {
            return Err(DataError::Version {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut m = DatasetManifest {
            format_version: header.format_version,
            seed: header.seed,
            templates: Vec::new(),
            gallery_names: Vec::new(),
            contexts: Vec::new(),
            images: Vec::with_capacity(header.counts.images),
            captions: Vec::with_capacity(header.counts.captions),
        };
        for (i, line) in lines {
            let rec: Record = serde_json::from_str(line).map_err(|e| DataError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            match rec {
                Record::Template { template_id, text } => {
                    if template_id as usize != m.templates.len() + 1 {
                        return Err(DataError::Parse {
                            line: i + 1,
                            message: format!("template {template_id} out of order"),
                        });
                    }
                    m.templates.push(text);
                }
                Record::Identity(g) => m.gallery_names.push(g),
                Record::Context(c) => m.contexts.push(c),
                Record::Image(img) => m.images.push(img),
                Record::Caption(c) => m.captions.push(c),
            }
        }
        if m.counts() != header.counts {
            return Err(DataError::Parse {
                line: 1,
                message: format!("header counts {:?} disagree with records {:?}", header.counts, m.counts()),
            });
        }
        Ok(m)
    }

    /// SHA-256 of the JSON-lines serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }
}

/// One violated manifest invariant with the offending ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "invariant", rename_all = "snake_case")]
pub enum Violation {
    DuplicateIdentity { identity_id: u32 },
    DuplicateName { name: String },
    DuplicateContext { context_id: u32 },
    StemPlaceholder { context_id: u32, stem_index: u32 },
    DuplicateImage { image_id: u32 },
    UnknownContext { image_id: u32, context_id: u32 },
    UnknownIdentity { image_id: u32, identity_id: u32 },
    ContextInSeveralSplits { context_id: u32, splits: Vec<Split> },
    IdentityInOneContext { identity_id: u32, split: Split, context_id: u32 },
    CaptionUnknownImage { image_id: u32 },
    CaptionNameMismatch { image_id: u32, template_id: u32, stem_index: u32, expected: String, found: String },
    CaptionPlaceholder { image_id: u32, template_id: u32, stem_index: u32 },
    CaptionTemplateRange { image_id: u32, template_id: u32 },
    CaptionStemRange { image_id: u32, stem_index: u32 },
    CaptionCount { image_id: u32, expected: usize, found: usize },
}

impl Violation {
    pub fn invariant(&self) -> &'static str {
        match self {
            Violation::DuplicateIdentity { .. } => "duplicate_identity",
            Violation::DuplicateName { .. } => "duplicate_name",
            Violation::DuplicateContext { .. } => "duplicate_context",
            Violation::StemPlaceholder { .. } => "stem_placeholder",
            Violation::DuplicateImage { .. } => "duplicate_image",
            Violation::UnknownContext { .. } => "unknown_context",
            Violation::UnknownIdentity { .. } => "unknown_identity",
            Violation::ContextInSeveralSplits { .. } => "context_in_several_splits",
            Violation::IdentityInOneContext { .. } => "identity_in_one_context",
            Violation::CaptionUnknownImage { .. } => "caption_unknown_image",
            Violation::CaptionNameMismatch { .. } => "caption_name_mismatch",
            Violation::CaptionPlaceholder { .. } => "caption_placeholder",
            Violation::CaptionTemplateRange { .. } => "caption_template_range",
            Violation::CaptionStemRange { .. } => "caption_stem_range",
            Violation::CaptionCount { .. } => "caption_count",
        }
    }

    /// Every invariant name the validator can report.
    pub const INVARIANTS: [&'static str; 15] = [
        "duplicate_identity",
        "duplicate_name",
        "duplicate_context",
        "stem_placeholder",
        "duplicate_image",
        "unknown_context",
        "unknown_identity",
        "context_in_several_splits",
        "identity_in_one_context",
        "caption_unknown_image",
        "caption_name_mismatch",
        "caption_placeholder",
        "caption_template_range",
        "caption_stem_range",
        "caption_count",
    ];
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn invariants(&self) -> BTreeSet<&'static str> {
        self.violations.iter().map(Violation::invariant).collect()
    }
}

/// Checks every manifest invariant. Violations are collected, never raised.
pub fn validate_manifest(m: &DatasetManifest) -> ValidationReport {
    let mut v = Vec::new();

    let mut names: BTreeMap<u32, &str> = BTreeMap::new();
    let mut seen_names = BTreeSet::new();
    for g in &m.gallery_names {
        if names.insert(g.identity_id, &g.name).is_some() {
            v.push(Violation::DuplicateIdentity { identity_id: g.identity_id });
        }
        if !seen_names.insert(g.name.as_str()) {
            v.push(Violation::DuplicateName { name: g.name.clone() });
        }
    }

    let mut contexts: BTreeMap<u32, &ContextSpec> = BTreeMap::new();
    for c in &m.contexts {
        if contexts.insert(c.context_id, c).is_some() {
            v.push(Violation::DuplicateContext { context_id: c.context_id });
        }
        for (i, s) in c.caption_stems.iter().enumerate() {
            if s.matches(ENTITY).count() != 1 {
                v.push(Violation::StemPlaceholder {
                    context_id: c.context_id,
                    stem_index: i as u32,
                });
            }
        }
    }

    let mut images: BTreeMap<u32, &ImageRecord> = BTreeMap::new();
    let mut context_splits: BTreeMap<u32, BTreeSet<Split>> = BTreeMap::new();
    let mut identity_contexts: BTreeMap<(u32, Split), BTreeSet<u32>> = BTreeMap::new();
    for img in &m.images {
        if images.insert(img.image_id, img).is_some() {
            v.push(Violation::DuplicateImage { image_id: img.image_id });
        }
        if !contexts.contains_key(&img.context_id) {
            v.push(Violation::UnknownContext {
                image_id: img.image_id,
                context_id: img.context_id,
            });
        }
        if !names.contains_key(&img.identity_id) {
            v.push(Violation::UnknownIdentity {
                image_id: img.image_id,
                identity_id: img.identity_id,
            });
        }
        context_splits.entry(img.context_id).or_default().insert(img.split);
        identity_contexts
            .entry((img.identity_id, img.split))
            .or_default()
            .insert(img.context_id);
    }
    for (context_id, splits) in &context_splits {
        if splits.len() > 1 {
            v.push(Violation::ContextInSeveralSplits {
                context_id: *context_id,
                splits: splits.iter().copied().collect(),
            });
        }
    }
    for ((identity_id, split), ctxs) in &identity_contexts {
        if ctxs.len() < 2 {
            v.push(Violation::IdentityInOneContext {
                identity_id: *identity_id,
                split: *split,
                context_id: *ctxs.iter().next().expect("non-empty"),
            });
        }
    }

    let k = m.templates.len();
    let mut per_image: BTreeMap<u32, BTreeSet<(u32, u32)>> = BTreeMap::new();
    let mut totals: BTreeMap<u32, usize> = BTreeMap::new();
    for c in &m.captions {
        let Some(img) = images.get(&c.image_id) else {
            v.push(Violation::CaptionUnknownImage { image_id: c.image_id });
            continue;
        };
        if let Some(expected) = names.get(&img.identity_id) {
            if *expected != c.entity {
                v.push(Violation::CaptionNameMismatch {
                    image_id: c.image_id,
                    template_id: c.template_id,
                    stem_index: c.stem_index,
                    expected: expected.to_string(),
                    found: c.entity.clone(),
                });
            }
        }
        if c.text.matches(ENTITY).count() != 1 {
            v.push(Violation::CaptionPlaceholder {
                image_id: c.image_id,
                template_id: c.template_id,
                stem_index: c.stem_index,
            });
        }
        if c.template_id == 0 || c.template_id as usize > k {
            v.push(Violation::CaptionTemplateRange {
                image_id: c.image_id,
                template_id: c.template_id,
            });
        }
        if let Some(ctx) = contexts.get(&img.context_id) {
            if c.stem_index as usize >= ctx.caption_stems.len() {
                v.push(Violation::CaptionStemRange {
                    image_id: c.image_id,
                    stem_index: c.stem_index,
                });
            }
        }
        per_image.entry(c.image_id).or_default().insert((c.stem_index, c.template_id));
        *totals.entry(c.image_id).or_default() += 1;
    }
    for img in images.values() {
        let Some(ctx) = contexts.get(&img.context_id) else { continue };
        let expected = ctx.caption_stems.len() * k;
        let found = per_image.get(&img.image_id).map_or(0, BTreeSet::len);
        let total = totals.get(&img.image_id).copied().unwrap_or(0);
        if found != expected || total != expected {
            v.push(Violation::CaptionCount {
                image_id: img.image_id,
                expected,
                found: total,
            });
        }
    }

    ValidationReport { violations: v }
}
