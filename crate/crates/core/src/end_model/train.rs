use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureSpec, SparseVec, DEFAULT_DIM};
use super::linear::{log_softmax, softmax, LinearModel};
use crate::{Error, Result};

/// Fixture-tuned, non-normative defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            epochs: 20,
            lr: 0.1,
            l2: 1e-5,
            batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn spec(&self) -> Result<FeatureSpec> {
        FeatureSpec::new(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Full objective after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// `softmax(logits) - q`: the gradient of `-Σ q log softmax(logits)`.
pub fn logit_gradient(logits: &[f64], q: &[f64]) -> Vec<f64> {
    softmax(logits).iter().zip(q).map(|(p, q)| p - q).collect()
}

fn check_rows(model: &LinearModel, xs: &[SparseVec], qs: &[Vec<f64>]) -> Result<()> {
    if xs.len() != qs.len() {
        return Err(Error::Contract(format!(
            "{} feature rows for {} soft labels",
            xs.len(),
            qs.len()
        )));
    }
    if let Some(q) = qs.iter().find(|q| q.len() != model.k) {
        return Err(Error::Contract(format!(
            "soft label of arity {} for {} classes",
            q.len(),
            model.k
        )));
    }
    Ok(())
}

/// `-(1/n) Σ_i Σ_c q_ic log p_ic + l2 ‖W‖²`; biases are not penalized.
pub fn soft_cross_entropy(
    model: &LinearModel,
    xs: &[SparseVec],
    qs: &[Vec<f64>],
    l2: f64,
) -> Result<f64> {
    check_rows(model, xs, qs)?;
    let n = xs.len().max(1) as f64;
    let data: f64 = xs
        .iter()
        .zip(qs)
        .map(|(x, q)| {
            let lp = log_softmax(&model.logits(x));
            -q.iter()
                .zip(&lp)
                .map(|(q, l)| if *q == 0.0 { 0.0 } else { q * l })
                .sum::<f64>()
        })
        .sum();
    Ok(data / n + l2 * model.l2_norm_sq())
}

/// Dense gradient of [`soft_cross_entropy`] with respect to weights and
/// biases, in the model's layouts.
pub fn soft_cross_entropy_gradient(
    model: &LinearModel,
    xs: &[SparseVec],
    qs: &[Vec<f64>],
    l2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_rows(model, xs, qs)?;
    let d = model.dim();
    let n = xs.len().max(1) as f64;
    let mut gw: Vec<f64> = model.weights.iter().map(|w| 2.0 * l2 * w).collect();
    let mut gb = vec![0.0; model.k];
    for (x, q) in xs.iter().zip(qs) {
        let g = logit_gradient(&model.logits(x), q);
        for (c, gc) in g.iter().enumerate() {
            gb[c] += gc / n;
            for &(i, v) in x {
                gw[c * d + i as usize] += gc * v / n;
            }
        }
    }
    Ok((gw, gb))
}

/// Weights stored as `scale * v` so the L2 shrink is O(1) per step.
struct Scaled {
    v: Vec<f64>,
    scale: f64,
    bias: Vec<f64>,
    k: usize,
    d: usize,
}

impl Scaled {
    fn logits(&self, x: &SparseVec) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let row = &self.v[c * self.d..(c + 1) * self.d];
                self.bias[c] + self.scale * x.iter().map(|&(i, v)| row[i as usize] * v).sum::<f64>()
            })
            .collect()
    }

    fn fold(&mut self) {
        let s = self.scale;
        self.v.iter_mut().for_each(|w| *w *= s);
        self.scale = 1.0;
    }
}

/// Mini-batch SGD on the soft cross-entropy. Shuffling and initialization
/// come from `seed`; the result is bit-identical for identical inputs.
pub fn train(
    xs: &[SparseVec],
    qs: &[Vec<f64>],
    k: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<(LinearModel, TrainReport)> {
    let spec = config.spec()?;
    let init = LinearModel::init(spec, k, seed);
    check_rows(&init, xs, qs)?;
    if xs.is_empty() {
        return Err(Error::Contract("no training examples".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config(
            "batch_size and epochs must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let mut w = Scaled {
        v: init.weights,
        scale: 1.0,
        bias: init.bias,
        k,
        d: spec.dim,
    };
    let shrink = 1.0 - 2.0 * config.lr * config.l2;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let b = idx.len() as f64;
            let mut loss = 0.0;
            let grads: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    let z = w.logits(&xs[i]);
                    loss -= qs[i]
                        .iter()
                        .zip(log_softmax(&z))
                        .map(|(q, l)| if *q == 0.0 { 0.0 } else { q * l })
                        .sum::<f64>();
                    logit_gradient(&z, &qs[i])
                })
                .collect();
            if !loss.is_finite() {
                return Err(Error::Training { epoch, batch });
            }
            w.scale *= shrink;
            if w.scale < 1e-6 {
                w.fold();
            }
            let step = config.lr / b;
            for (&i, g) in idx.iter().zip(&grads) {
                for (c, gc) in g.iter().enumerate() {
                    w.bias[c] -= step * gc;
                    let row = c * w.d;
                    for &(f, v) in &xs[i] {
                        w.v[row + f as usize] -= step * gc * v / w.scale;
                    }
                }
            }
        }
        let mut snapshot = Scaled {
            v: w.v.clone(),
            scale: w.scale,
            bias: w.bias.clone(),
            k,
            d: spec.dim,
        };
        snapshot.fold();
        let model = LinearModel {
            spec,
            k,
            seed,
            weights: snapshot.v,
            bias: snapshot.bias,
        };
        let loss = soft_cross_entropy(&model, xs, qs, config.l2)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        epoch_losses.push(loss);
    }
    w.fold();
    Ok((
        LinearModel {
            spec,
            k,
            seed,
            weights: w.v,
            bias: w.bias,
        },
        TrainReport { seed, epoch_losses },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            dim: 64,
            epochs: 30,
            lr: 0.5,
            l2: 1e-4,
            batch_size: 4,
        }
    }

    #[test]
    fn logit_gradient_at_zero() {
        let g = logit_gradient(&[0.0, 0.0], &[0.7, 0.3]);
        assert!((g[0] + 0.2).abs() < 1e-15 && (g[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn one_hot_soft_labels_equal_hard_cross_entropy() {
        let spec = FeatureSpec::new(32).unwrap();
        let model = LinearModel::init(spec, 3, 9);
        let xs: Vec<SparseVec> = ["a b c", "d e", "f"]
            .iter()
            .map(|t| spec.featurize_text(t))
            .collect();
        let hard = [2usize, 0, 1];
        let qs: Vec<Vec<f64>> = hard
            .iter()
            .map(|&y| (0..3).map(|c| if c == y { 1.0 } else { 0.0 }).collect())
            .collect();
        let soft = soft_cross_entropy(&model, &xs, &qs, 0.0).unwrap();
        let nll: f64 = xs
            .iter()
            .zip(hard)
            .map(|(x, y)| -log_softmax(&model.logits(x))[y])
            .sum::<f64>()
            / 3.0;
        assert!((soft - nll).abs() < 1e-9);
    }

    #[test]
    fn learns_separable_data_and_is_deterministic() {
        let spec = FeatureSpec::new(64).unwrap();
        let texts = [
            "buy now",
            "free money",
            "hello friend",
            "see you",
            "buy free",
            "you friend",
        ];
        let ys = [1usize, 1, 0, 0, 1, 0];
        let xs: Vec<SparseVec> = texts.iter().map(|t| spec.featurize_text(t)).collect();
        let qs: Vec<Vec<f64>> = ys
            .iter()
            .map(|&y| {
                if y == 1 {
                    vec![0.1, 0.9]
                } else {
                    vec![0.9, 0.1]
                }
            })
            .collect();
        let (m, r) = train(&xs, &qs, 2, &small(), 3).unwrap();
        assert!(r.epoch_losses.last() <= r.epoch_losses.first());
        for (x, y) in xs.iter().zip(ys) {
            assert_eq!(m.predict(x), y);
        }
        let (again, _) = train(&xs, &qs, 2, &small(), 3).unwrap();
        assert_eq!(m.to_bytes(), again.to_bytes());
        let (other, _) = train(&xs, &qs, 2, &small(), 4).unwrap();
        assert_ne!(m.to_bytes(), other.to_bytes());
    }

    #[test]
    fn uniform_targets_give_a_flat_model() {
        let spec = FeatureSpec::new(64).unwrap();
        let xs: Vec<SparseVec> = ["a b", "c d", "a d", "b c"]
            .iter()
            .map(|t| spec.featurize_text(t))
            .collect();
        let qs = vec![vec![0.5, 0.5]; 4];
        let cfg = TrainConfig { l2: 0.0, ..small() };
        let (m, _) = train(&xs, &qs, 2, &cfg, 1).unwrap();
        for x in &xs {
            let z = m.logits(x);
            assert!((z[0] - z[1]).abs() < 0.05);
        }
    }

    #[test]
    fn nan_targets_report_the_batch() {
        let spec = FeatureSpec::new(64).unwrap();
        let xs = vec![spec.featurize_text("a"); 8];
        let mut qs = vec![vec![0.5, 0.5]; 8];
        qs[5] = vec![f64::NAN, 0.5];
        let cfg = TrainConfig {
            batch_size: 8,
            ..small()
        };
        assert!(matches!(
            train(&xs, &qs, 2, &cfg, 1),
            Err(Error::Training { epoch: 0, batch: 0 })
        ));
    }
}
