//! Deterministic feature-hashing embedder for tests and offline runs.
//!
//! Rule: every canonical word token contributes weight 1.0 and every
//! character trigram of `^word$` contributes 0.5. A feature lands in bucket
//! `fnv1a64(feature) % dim` with sign `-1` when the top hash bit is set,
//! else `+1`. Text with no word tokens hashes its trimmed raw form as a
//! single feature. The vector is L2-normalized; if all buckets cancel,
//! bucket 0 is set to 1.

use super::{BackendError, EmbeddingBackend};
use crate::text;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    model_id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        HashingEmbedder {
            dim: dim.max(1),
            model_id: format!("hashing-{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn add(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a64(feature.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % self.dim as u64) as usize] += sign * weight;
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let words = text::words(text);
        if words.is_empty() {
            self.add(&mut v, text.trim(), 1.0);
        }
        for w in &words {
            self.add(&mut v, w, 1.0);
            let padded: Vec<char> = format!("^{w}$").chars().collect();
            for tri in padded.windows(3) {
                self.add(&mut v, &tri.iter().collect::<String>(), 0.5);
            }
        }
        match crate::vector::normalized(&v) {
            Some(n) => n,
            None => {
                let mut v = vec![0.0; self.dim];
                v[0] = 1.0;
                v
            }
        }
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}
