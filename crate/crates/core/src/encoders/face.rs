//! Deterministic stand-in for a face-recognition network.
//!
//! Each identity owns a random unit anchor in `R^d_face`. A "face sample" is
//! the anchor plus seeded Gaussian jitter, renormalized. `jitter_sigma` is
//! the expected jitter norm relative to the unit anchor (per-coordinate
//! standard deviation `jitter_sigma / sqrt(d_face)`).

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::seed;
use crate::tensor::kernels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceAnchorTable {
    pub seed: u64,
    pub d_face: usize,
    pub jitter_sigma: f64,
    pub anchors: BTreeMap<u32, Vec<f64>>,
}

/// Uniform sample on the unit sphere.
fn unit_vector(seed: u64, tag: &str, idx: &[u64], dim: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed, tag, idx);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if kernels::l2_norm(&v) > 1e-12 {
            return kernels::normalized(&v);
        }
    }
}

impl FaceAnchorTable {
    pub fn generate(identities: impl IntoIterator<Item = u32>, d_face: usize, jitter_sigma: f64, seed: u64) -> Self {
        let anchors = identities
            .into_iter()
            .map(|id| (id, unit_vector(seed, "face-anchor", &[u64::from(id)], d_face)))
            .collect();
        Self {
            seed,
            d_face,
            jitter_sigma,
            anchors,
        }
    }

    pub fn anchor(&self, identity: u32) -> Result<&[f64], EncoderError> {
        self.anchors
            .get(&identity)
            .map(Vec::as_slice)
            .ok_or(EncoderError::UnknownIdentity(identity))
    }

    /// `normalize(anchor + jitter)`; `(identity, sample_seed)` fully
    /// determines the result.
    pub fn face_features(&self, identity: u32, sample_seed: u64) -> Result<Vec<f64>, EncoderError> {
        let anchor = self.anchor(identity)?;
        if self.jitter_sigma == 0.0 {
            return Ok(anchor.to_vec());
        }
        let std = self.jitter_sigma / (self.d_face as f64).sqrt();
        let mut rng = seed::rng(self.seed, "face-jitter", &[u64::from(identity), sample_seed]);
        let noisy: Vec<f64> = anchor
            .iter()
            .map(|a| {
                let z: f64 = StandardNormal.sample(&mut rng);
                a + std * z
            })
            .collect();
        Ok(kernels::normalized(&noisy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        kernels::dot(a, b) / (kernels::l2_norm(a) * kernels::l2_norm(b))
    }

    #[test]
    fn zero_jitter_returns_anchor() {
        let t = FaceAnchorTable::generate(0..3, 64, 0.0, 5);
        assert_eq!(t.face_features(1, 99).unwrap(), t.anchors[&1]);
    }

    #[test]
    fn deterministic_per_identity_and_seed() {
        let t = FaceAnchorTable::generate(0..3, 64, 0.1, 5);
        assert_eq!(t.face_features(2, 7).unwrap(), t.face_features(2, 7).unwrap());
        assert_ne!(t.face_features(2, 7).unwrap(), t.face_features(2, 8).unwrap());
        let norm = kernels::l2_norm(&t.face_features(2, 7).unwrap());
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_identity_is_a_lookup_error() {
        let t = FaceAnchorTable::generate(0..3, 8, 0.1, 5);
        assert!(matches!(t.face_features(3, 0), Err(EncoderError::UnknownIdentity(3))));
    }

    // Monte-Carlo oracles over 1000 pairs fix the construction thresholds.
    #[test]
    fn same_identity_samples_are_close() {
        let t = FaceAnchorTable::generate(0..1000, 64, 0.1, 11);
        let min = (0..1000u32)
            .map(|id| cos(&t.face_features(id, 1).unwrap(), &t.face_features(id, 2).unwrap()))
            .fold(f64::INFINITY, f64::min);
        assert!(min > 0.9, "min same-identity cosine {min}");
    }

    #[test]
    fn different_identities_are_nearly_orthogonal() {
        let pairs = 20_000u32;
        let t = FaceAnchorTable::generate(0..2 * pairs, 64, 0.1, 13);
        let mut far = 0;
        let mut mean = 0.0;
        for pair in 0..pairs {
            let c = cos(
                &t.face_features(2 * pair, 0).unwrap(),
                &t.face_features(2 * pair + 1, 0).unwrap(),
            );
            mean += c / f64::from(pairs);
            if c.abs() >= 0.5 {
                far += 1;
            }
        }
        let rate = f64::from(far) / f64::from(pairs);
        assert!(rate < 1e-3, "P(|cos| >= 0.5) estimated at {rate}");
        assert!(mean.abs() < 0.01, "mean cosine {mean}");
    }
}
