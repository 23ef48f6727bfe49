use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::QueryError;
use crate::encoders::{EncoderError, FaceAnchorTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub identity_id: u32,
    pub face: Vec<f64>,
}

/// Name → face store: the external knowledge base consulted at query time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceGallery {
    entries: BTreeMap<String, GalleryEntry>,
}

impl FaceGallery {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a gallery whose face for each identity is the table sample drawn
    /// with `sample_seed`.
    pub fn from_table(
        names: impl IntoIterator<Item = (String, u32)>,
        table: &FaceAnchorTable,
        sample_seed: u64,
    ) -> Result<Self, QueryError> {
        let mut g = Self::new();
        for (name, id) in names {
            let face = table.face_features(id, sample_seed)?;
            g.insert(name, id, face)?;
        }
        Ok(g)
    }

    pub fn insert(&mut self, name: String, identity_id: u32, face: Vec<f64>) -> Result<(), QueryError> {
        if self.entries.contains_key(&name) {
            return Err(QueryError::DuplicateName(name));
        }
        self.entries.insert(name, GalleryEntry { identity_id, face });
        Ok(())
    }

    pub fn lookup_face(&self, name: &str) -> Result<&[f64], QueryError> {
        self.entries
            .get(name)
            .map(|e| e.face.as_slice())
            .ok_or_else(|| QueryError::GalleryMiss(name.to_string()))
    }

    pub fn identity_of(&self, name: &str) -> Option<u32> {
        self.entries.get(name).map(|e| e.identity_id)
    }

    pub fn name_of(&self, identity: u32) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, e)| e.identity_id == identity)
            .map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &GalleryEntry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that every identity resolves in the anchor table.
    pub fn check_against(&self, table: &FaceAnchorTable) -> Result<(), QueryError> {
        for e in self.entries.values() {
            table.anchor(e.identity_id)?;
        }
        Ok(())
    }
}

impl From<EncoderError> for QueryError {
    fn from(e: EncoderError) -> Self {
        QueryError::Encoder(e)
    }
}
