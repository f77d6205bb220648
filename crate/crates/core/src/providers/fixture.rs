//! Offline providers: canned completions and seeded token embeddings.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionProvider, Embedder};
use crate::corpus::Document;
use crate::error::{Error, Result};

/// Canned completion answers keyed by document id.
///
/// A document without an `augment` entry is "rephrased" as itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureCompletions {
    #[serde(default)]
    pub goals: BTreeMap<String, String>,
    #[serde(default)]
    pub augment: BTreeMap<String, (String, String)>,
}

impl CompletionProvider for FixtureCompletions {
    fn summarize(&self, doc: &Document, _goal_text: &str) -> Result<String> {
        self.goals
            .get(&doc.id)
            .cloned()
            .ok_or_else(|| Error::Transport(format!("fixture has no goal summary for document {:?}", doc.id)))
    }

    fn rephrase(&self, doc: &Document) -> Result<(String, String)> {
        Ok(self
            .augment
            .get(&doc.id)
            .cloned()
            .unwrap_or_else(|| (doc.raw_text.clone(), doc.raw_text.clone())))
    }
}

fn token_rng(seed: u64, salt: &[u8], token: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt);
    h.update(token.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn normalize_f32(mut v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v.mapv_inplace(|x| (x / n) as f32 as f64);
    v
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::domain("embedding dimension must be positive"))
    } else {
        Ok(())
    }
}

/// Each token maps to a unit vector drawn from a PRNG seeded by
/// `(seed, token bytes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        check_dim(dim)?;
        Ok(HashEmbedder { dim, seed })
    }

    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        random_unit(self.dim, token_rng(self.seed, b"hash", token))
    }
}

fn random_unit(dim: usize, mut rng: ChaCha8Rng) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if v.dot(&v) > 1e-12 {
            return normalize_f32(v);
        }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("fixture-hash:{}:{}", self.seed, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((tokens.len(), self.dim));
        for (i, t) in tokens.iter().enumerate() {
            m.row_mut(i).assign(&self.token_vector(t));
        }
        Ok(m)
    }
}

/// Largest Euclidean norm of the perturbation added to a planted direction.
pub const PLANTED_NOISE: f64 = 0.1;

/// Tokens named `c<k>_<anything>` map to basis direction `k` plus a small
/// seeded perturbation, renormalized; every other token behaves as in
/// [`HashEmbedder`]. Used to build corpora with known cluster structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedEmbedder {
    dim: usize,
    seed: u64,
}

impl PlantedEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        check_dim(dim)?;
        Ok(PlantedEmbedder { dim, seed })
    }

    /// Planted cluster of a token, if it follows the `c<k>_` naming scheme.
    pub fn cluster_of(token: &str) -> Option<usize> {
        let rest = token.strip_prefix('c')?;
        let (digits, _) = rest.split_once('_')?;
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    }

    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        match Self::cluster_of(token) {
            Some(k) if k < self.dim => {
                let mut rng = token_rng(self.seed, b"planted", token);
                // Each component within +-a keeps the perturbation norm <= PLANTED_NOISE.
                let a = PLANTED_NOISE / (self.dim as f64).sqrt();
                let mut v: Array1<f64> = (0..self.dim).map(|_| rng.random_range(-a..=a)).collect();
                v[k] += 1.0;
                normalize_f32(v)
            }
            _ => random_unit(self.dim, token_rng(self.seed, b"hash", token)),
        }
    }
}

impl Embedder for PlantedEmbedder {
    fn id(&self) -> String {
        format!("planted:{}:{}", self.seed, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((tokens.len(), self.dim));
        for (i, t) in tokens.iter().enumerate() {
            m.row_mut(i).assign(&self.token_vector(t));
        }
        Ok(m)
    }
}
