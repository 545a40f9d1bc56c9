use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{FeatureSpec, SparseVec};
use crate::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"PWSM";
pub const MODEL_VERSION: u32 = 1;
/// Half-width of the uniform weight initialization.
pub const INIT_SCALE: f64 = 1e-3;

/// `K × D` weights (row-major by class) and `K` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub spec: FeatureSpec,
    pub k: usize,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl LinearModel {
    pub fn zeros(spec: FeatureSpec, k: usize, seed: u64) -> Self {
        Self {
            spec,
            k,
            seed,
            weights: vec![0.0; k * spec.dim],
            bias: vec![0.0; k],
        }
    }

    /// Small uniform weights drawn from `seed`; zero biases.
    pub fn init(spec: FeatureSpec, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(spec, k, seed);
        model
            .weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-INIT_SCALE..INIT_SCALE));
        model
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn logits(&self, x: &SparseVec) -> Vec<f64> {
        let d = self.dim();
        (0..self.k)
            .map(|c| {
                let row = &self.weights[c * d..(c + 1) * d];
                self.bias[c] + x.iter().map(|&(i, v)| row[i as usize] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &SparseVec) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Argmax class; ties go to the lower index.
    pub fn predict(&self, x: &SparseVec) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for c in 1..z.len() {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Header (magic, version u32, D u64, K u32, seed u64), then weights and
    /// biases as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * (self.weights.len() + self.k));
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for w in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |why: &str| Error::Contract(format!("malformed model file: {why}"));
        if bytes.len() < 28 || bytes[..4] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        if u32_at(4) != MODEL_VERSION {
            return Err(bad("unsupported version"));
        }
        let spec = FeatureSpec::new(u64_at(8) as usize)?;
        let k = u32_at(16) as usize;
        let seed = u64_at(20);
        let count = k * spec.dim + k;
        if bytes.len() != 28 + 8 * count {
            return Err(bad("payload length"));
        }
        let vals: Vec<f64> = bytes[28..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite weight"));
        }
        let (w, b) = vals.split_at(k * spec.dim);
        Ok(Self {
            spec,
            k,
            seed,
            weights: w.to_vec(),
            bias: b.to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::load(path, e))?)
    }
}
