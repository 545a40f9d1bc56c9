use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::hashing::fnv1a64;
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 1 << 18;

/// Sorted, duplicate-free `(index, value)` pairs.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Hashed dimension; a power of two.
    pub dim: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Text the featurizer sees: TEXT, then PERSON1 and PERSON2 when present.
pub fn example_text(example: &Example) -> String {
    ["text", "person1", "person2"]
        .iter()
        .filter_map(|f| example.field(f))
        .collect::<Vec<_>>()
        .join(" ")
}

impl FeatureSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if !dim.is_power_of_two() || dim > u32::MAX as usize {
            return Err(Error::Config(format!(
                "feature dimension {dim} is not a power of two"
            )));
        }
        Ok(Self { dim })
    }

    /// Bucket and sign of one feature string. The sign is the parity of the
    /// hash's set bits.
    pub fn slot(&self, feature: &str) -> (u32, f64) {
        let h = fnv1a64(feature.as_bytes());
        let index = (h & (self.dim as u64 - 1)) as u32;
        let sign = if h.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
        (index, sign)
    }

    /// Signed counts of unigrams (`u:tok`) and bigrams (`b:t1 t2`),
    /// L2-normalized. Empty text gives the zero vector.
    pub fn featurize_text(&self, text: &str) -> SparseVec {
        let toks = tokenize(text);
        let mut raw: Vec<(u32, f64)> = Vec::with_capacity(2 * toks.len());
        for t in &toks {
            raw.push(self.slot(&format!("u:{t}")));
        }
        for w in toks.windows(2) {
            raw.push(self.slot(&format!("b:{} {}", w[0], w[1])));
        }
        raw.sort_by_key(|&(i, _)| i);
        let mut out: SparseVec = Vec::with_capacity(raw.len());
        for (i, v) in raw {
            match out.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => out.push((i, v)),
            }
        }
        out.retain(|&(_, v)| v != 0.0);
        let norm = out.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        out
    }

    pub fn featurize(&self, example: &Example) -> SparseVec {
        self.featurize_text(&example_text(example))
    }

    pub fn featurize_all(&self, examples: &[Example]) -> Vec<SparseVec> {
        examples.iter().map(|e| self.featurize(e)).collect()
    }
}
