use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::tensor::kernels;

pub const RECALL_KS: [usize; 4] = [1, 5, 10, 50];

/// Image database: ids with their unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageIndex {
    pub ids: Vec<u32>,
    pub embeddings: Vec<Vec<f64>>,
}

impl ImageIndex {
    pub fn new(ids: Vec<u32>, embeddings: Vec<Vec<f64>>) -> Result<Self, EvalError> {
        if ids.len() != embeddings.len() {
            return Err(EvalError::Usage(format!(
                "{} ids but {} embeddings",
                ids.len(),
                embeddings.len()
            )));
        }
        Ok(Self { ids, embeddings })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub image_ids: Vec<u32>,
    pub similarities: Vec<f64>,
}

/// Descending similarity, ascending id on ties.
fn order(a: (f64, u32), b: (f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Full ranking of the index by cosine similarity to `query`.
pub fn rank_images(query: &[f64], index: &ImageIndex) -> Result<RankedList, EvalError> {
    if index.is_empty() {
        return Err(EvalError::Usage("image database is empty".into()));
    }
    let mut scored: Vec<(f64, u32)> = index
        .ids
        .iter()
        .zip(&index.embeddings)
        .map(|(&id, e)| (kernels::dot(query, e), id))
        .collect();
    scored.sort_by(|&a, &b| order(a, b));
    Ok(RankedList {
        image_ids: scored.iter().map(|s| s.1).collect(),
        similarities: scored.iter().map(|s| s.0).collect(),
    })
}

/// Heap entry ordered so that the worst-ranked item is the heap maximum.
#[derive(PartialEq)]
struct Entry(f64, u32);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        order((self.0, self.1), (other.0, other.1))
    }
}

/// The first `min(k, n)` entries of [`rank_images`], via a bounded heap.
pub fn top_k(query: &[f64], index: &ImageIndex, k: usize) -> Result<RankedList, EvalError> {
    if index.is_empty() {
        return Err(EvalError::Usage("image database is empty".into()));
    }
    if k == 0 {
        return Err(EvalError::Usage("k must be at least 1".into()));
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (&id, e) in index.ids.iter().zip(&index.embeddings) {
        heap.push(Entry(kernels::dot(query, e), id));
        if heap.len() > k {
            heap.pop();
        }
    }
    let best = heap.into_sorted_vec();
    Ok(RankedList {
        image_ids: best.iter().map(|e| e.1).collect(),
        similarities: best.iter().map(|e| e.0).collect(),
    })
}

/// `|relevant ∩ top-k| / min(k, |relevant|)`, as a fraction.
pub fn recall_at_k(ranked: &RankedList, relevant: &BTreeSet<u32>, k: usize) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::Usage("relevant set is empty".into()));
    }
    if k == 0 {
        return Err(EvalError::Usage("k must be at least 1".into()));
    }
    let hits = ranked.image_ids.iter().take(k).filter(|id| relevant.contains(id)).count();
    Ok(hits as f64 / k.min(relevant.len()) as f64)
}

/// Sum of recall@{1,5,10,50} in percentage points.
pub fn rsum(recalls: &BTreeMap<usize, f64>) -> Result<f64, EvalError> {
    RECALL_KS.iter().try_fold(0.0, |acc, k| {
        recalls
            .get(k)
            .map(|r| acc + r)
            .ok_or_else(|| EvalError::Usage(format!("missing recall@{k}")))
    })
}
