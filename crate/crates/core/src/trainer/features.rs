//! Hashed bag of unigrams and bigrams.

use serde::{Deserialize, Serialize};

use crate::corpus::ResolvedPair;
use crate::text::{fnv1a64, normalized_tokens};

pub const DEFAULT_DIM: usize = 1 << 16;

/// Separates premise from hypothesis in the token stream. It takes part in
/// bigrams but is never emitted as a unigram.
pub const BOUNDARY: &str = "␟";

/// Sparse feature vector with sorted, unique indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds a vector from possibly repeated `(index, count)` pairs.
    pub fn from_counts(dim: usize, mut raw: Vec<(u32, f64)>) -> Self {
        raw.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(raw.len());
        for (i, c) in raw {
            debug_assert!((i as usize) < dim);
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc += c,
                _ => entries.push((i, c)),
            }
        }
        FeatureVector { dim, entries }
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn feature_index(feature: &str, dim: usize) -> u32 {
    (fnv1a64(feature.as_bytes()) % dim as u64) as u32
}

/// Token stream `premise ␟ hypothesis` hashed into `dim` buckets.
pub fn featurize(pair: &ResolvedPair, dim: usize) -> FeatureVector {
    featurize_text(&pair.premise, &pair.hypothesis, dim)
}

pub fn featurize_text(premise: &str, hypothesis: &str, dim: usize) -> FeatureVector {
    assert!(dim > 0 && dim <= u32::MAX as usize + 1, "feature dimension out of range");
    let mut tokens = normalized_tokens(premise);
    tokens.push(BOUNDARY.to_string());
    tokens.extend(normalized_tokens(hypothesis));

    let mut raw = Vec::with_capacity(tokens.len() * 2);
    for t in tokens.iter().filter(|t| t.as_str() != BOUNDARY) {
        raw.push((feature_index(t, dim), 1.0));
    }
    let mut bigram = String::new();
    for w in tokens.windows(2) {
        bigram.clear();
        bigram.push_str(&w[0]);
        bigram.push(' ');
        bigram.push_str(&w[1]);
        raw.push((feature_index(&bigram, dim), 1.0));
    }
    // A lone boundary leaves no bigram behind, so empty text maps to zero.
    FeatureVector::from_counts(dim, raw)
}
