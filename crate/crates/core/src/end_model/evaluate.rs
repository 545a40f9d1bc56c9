use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::SparseVec;
use super::linear::LinearModel;
use super::train::{train, TrainConfig, TrainReport};
use crate::analysis::{metrics, MetricsReport};
use crate::label_model::SoftLabels;
use crate::{Error, Result};

/// Replicate seeds used when none are configured.
pub const DEFAULT_SEEDS: [u64; 6] = [0, 1, 2, 3, 4, 5];

pub const SE_DEFINITION: &str = "sample standard deviation (ddof = 1) divided by sqrt(n)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// Percentages to one decimal: `91.8 (1.6)`.
    pub fn format_pct(&self) -> String {
        format!("{:.1} ({:.1})", self.mean * 100.0, self.se * 100.0)
    }
}

pub fn mean_se(values: &[f64]) -> Result<MeanSe> {
    if values.len() < 2 {
        return Err(Error::Contract(
            "standard error needs at least two values".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MeanSe {
        mean,
        se: var.sqrt() / n.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub accuracy: MeanSe,
    pub precision: MeanSe,
    pub recall: MeanSe,
    pub f1: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub runs: Vec<SeedMetrics>,
    pub summary: ReplicateSummary,
    pub se_definition: String,
}

impl ReplicateReport {
    pub fn from_runs(runs: Vec<SeedMetrics>) -> Result<Self> {
        let col = |f: fn(&MetricsReport) -> f64| -> Result<MeanSe> {
            mean_se(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
        };
        let summary = ReplicateSummary {
            accuracy: col(|m| m.accuracy)?,
            precision: col(|m| m.precision)?,
            recall: col(|m| m.recall)?,
            f1: col(|m| m.f1)?,
        };
        Ok(Self {
            runs,
            summary,
            se_definition: SE_DEFINITION.into(),
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }
}

pub fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.len() < 2 {
        return Err(Error::Contract("replicates need at least two seeds".into()));
    }
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        return Err(Error::Contract(format!("duplicate seeds in {seeds:?}")));
    }
    Ok(())
}

/// One model per seed on identical soft labels. Seeds train concurrently;
/// each training is single-threaded.
pub fn train_replicates(
    xs: &[SparseVec],
    soft: &SoftLabels,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<(LinearModel, TrainReport)>> {
    check_seeds(seeds)?;
    seeds
        .par_iter()
        .map(|&s| train(xs, &soft.rows, soft.k(), config, s))
        .collect()
}

pub fn evaluate_models(
    models: &[LinearModel],
    xs: &[SparseVec],
    gold: &[usize],
    positive: usize,
) -> Result<ReplicateReport> {
    let runs = models
        .iter()
        .map(|m| {
            let pred: Vec<usize> = xs.iter().map(|x| m.predict(x)).collect();
            Ok(SeedMetrics {
                seed: m.seed,
                metrics: metrics(&pred, gold, positive)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ReplicateReport::from_runs(runs)
}

/// Trains one model per seed and evaluates each on the gold split.
pub fn evaluate_replicates(
    train_xs: &[SparseVec],
    soft: &SoftLabels,
    eval_xs: &[SparseVec],
    gold: &[usize],
    positive: usize,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<ReplicateReport> {
    let models: Vec<LinearModel> = train_replicates(train_xs, soft, config, seeds)?
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    evaluate_models(&models, eval_xs, gold, positive)
}
