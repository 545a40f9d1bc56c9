//! Samplers for planted label-model data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Vote, VoteMatrix};
use crate::label_model::DawidSkeneParams;

/// Conditionally independent labeling functions with symmetric errors and
/// class-independent abstention.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDawidSkene {
    pub n: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub prior: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub matrix: VoteMatrix,
    pub gold: Vec<usize>,
}

pub(crate) fn sample_class(rng: &mut impl Rng, prior: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    prior.len() - 1
}

impl PlantedDawidSkene {
    pub fn lf_names(&self) -> Vec<String> {
        (0..self.alpha.len()).map(|j| format!("lf{j}")).collect()
    }

    pub fn sample(&self) -> Planted {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let k = self.prior.len();
        let mut gold = Vec::with_capacity(self.n);
        let mut rows = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let y = sample_class(&mut rng, &self.prior);
            let row = self
                .alpha
                .iter()
                .zip(&self.beta)
                .map(|(&a, &b)| {
                    if rng.random::<f64>() >= b {
                        return Vote::abstain(1.0);
                    }
                    if rng.random::<f64>() < a {
                        Vote::class(y, 1.0)
                    } else {
                        let other = rng.random_range(0..k - 1);
                        Vote::class(if other >= y { other + 1 } else { other }, 1.0)
                    }
                })
                .collect();
            gold.push(y);
            rows.push(row);
        }
        let ids = (0..self.n).map(|i| format!("x{i}")).collect();
        let matrix = VoteMatrix::new(self.lf_names(), ids, rows, "train").expect("well-formed");
        Planted { matrix, gold }
    }

    /// The generating parameters, for Bayes-oracle posteriors.
    pub fn params(&self) -> DawidSkeneParams {
        DawidSkeneParams {
            lf_names: self.lf_names(),
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            prior: self.prior.clone(),
            confusion: None,
        }
    }
}
