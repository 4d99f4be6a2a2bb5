//! Text embedders. All embedders return unit-norm vectors of a fixed
//! dimension, so cosine similarity is a dot product.

use std::collections::HashMap;

use async_trait::async_trait;

use crate::error::Result;

#[async_trait]
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Lower-cased alphanumeric words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic bag-of-words embedder: each word is hashed into one of
/// `dim` buckets and the count vector is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 512;

    pub fn new(dim: usize) -> Self {
        HashEmbedder { dim: dim.max(1) }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f64; self.dim];
        for w in words(text) {
            v[(fnv1a(w.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter().map(|x| (x / norm) as f32).collect()
        } else {
            v.into_iter().map(|x| x as f32).collect()
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(Self::DEFAULT_DIM)
    }
}

#[async_trait]
impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Cosine similarity computed in `f64`. Identical non-zero vectors give
/// exactly 1.0; a zero vector gives 0.0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut aa, mut bb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (dot / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// Exact cosine over word-count vectors, without hashing.
pub fn bag_of_words_similarity(a: &str, b: &str) -> f64 {
    let count = |t: &str| {
        let mut m: HashMap<String, f64> = HashMap::new();
        for w in words(t) {
            *m.entry(w).or_default() += 1.0;
        }
        m
    };
    let (ca, cb) = (count(a), count(b));
    let dot: f64 = ca.iter().map(|(w, x)| x * cb.get(w).copied().unwrap_or(0.0)).sum();
    let na: f64 = ca.values().map(|x| x * x).sum();
    let nb: f64 = cb.values().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn identical_text_is_exactly_one() {
        let e = HashEmbedder::default();
        let v = e.embed_one("How do I speed up my cache?");
        assert_eq!(cosine(&v, &v), 1.0);
        let norm: f64 = v.iter().map(|x| (*x as f64).powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_words_are_orthogonal() {
        let e = HashEmbedder::default();
        let a = e.embed_one("How do I speed up my cache?");
        let b = e.embed_one("Use data structures like B-trees & Tries");
        assert_eq!(cosine(&a, &b), 0.0);
        assert_eq!(cosine(&a, &vec![0.0; 512]), 0.0);
    }

    #[test]
    fn bag_of_words() {
        assert_eq!(bag_of_words_similarity("a b", "b a"), 1.0);
        assert_eq!(bag_of_words_similarity("a b", "c d"), 0.0);
        assert_eq!(bag_of_words_similarity("", "c d"), 0.0);
    }

    proptest! {
        #[test]
        fn self_similarity_is_one(text in "[a-z]{1,8}( [a-z]{1,8}){0,30}") {
            let e = HashEmbedder::default();
            let v = e.embed_one(&text);
            prop_assert_eq!(cosine(&v, &v), 1.0);
        }
    }
}
