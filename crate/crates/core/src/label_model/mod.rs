//! Label models: turn a vote matrix into one probability vector per example.
//!
//! Three models are provided. [`majority_vote`] counts votes.
//! [`fit_dawid_skene`] fits a latent-class model by EM, with one accuracy
//! per labeling function and abstention independent of the class.
//! [`fit_triplets`] estimates binary accuracies in closed form from
//! pairwise agreement moments.

mod dawid_skene;
mod io;
mod majority;
mod triplet;

use serde::{Deserialize, Serialize};

use crate::data::VoteMatrix;
use crate::hashing::sha256_hex;
use crate::{Error, Result};

pub use dawid_skene::{
    fit_dawid_skene, infer, log_likelihood, DawidSkeneConfig, DawidSkeneFit, DawidSkeneParams,
    ALPHA_MAX, ALPHA_MIN, DEFAULT_RESTARTS,
};
pub use io::{read_label_meta, read_soft_labels, write_label_meta, write_soft_labels};
pub use majority::majority_vote;
pub use triplet::{
    fit_triplets, triplet_accuracies, TripletFit, TripletParams, A_MAX, MOMENT_DELTA,
};

/// Row-sum tolerance for soft labels.
pub const ROW_TOLERANCE: f64 = 1e-8;

/// Scores closer than this are ties for hard-label purposes.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// One probability vector over the classes per example.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    pub example_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Which model produced the rows.
    pub model: String,
    /// Class prior; breaks hard-label ties.
    pub prior: Vec<f64>,
}

impl SoftLabels {
    pub fn new(
        example_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
        model: impl Into<String>,
        prior: Vec<f64>,
    ) -> Result<Self> {
        let soft = Self {
            example_ids,
            rows,
            model: model.into(),
            prior,
        };
        soft.validate()?;
        Ok(soft)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.prior.len();
        if self.example_ids.len() != self.rows.len() {
            return Err(Error::Validation(format!(
                "{} ids for {} soft-label rows",
                self.example_ids.len(),
                self.rows.len()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != k
                || row.iter().any(|p| !(0.0..=1.0).contains(p))
                || (sum - 1.0).abs() > ROW_TOLERANCE
            {
                return Err(Error::Validation(format!(
                    "soft-label row {i} is not a distribution over {k} classes: {row:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn k(&self) -> usize {
        self.prior.len()
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        hard_labels(self)
    }
}

/// Argmax with ties going to the class with the larger prior, then to the
/// lower index.
pub fn argmax_with_prior(row: &[f64], prior: &[f64]) -> usize {
    let mut best = 0;
    for c in 1..row.len() {
        let diff = row[c] - row[best];
        if diff > TIE_TOLERANCE || (diff.abs() <= TIE_TOLERANCE && prior[c] > prior[best]) {
            best = c;
        }
    }
    best
}

pub fn hard_labels(soft: &SoftLabels) -> Vec<usize> {
    soft.rows
        .iter()
        .map(|r| argmax_with_prior(r, &soft.prior))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelModelKind {
    Mv,
    #[default]
    Ds,
    Triplet,
}

impl LabelModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            LabelModelKind::Mv => "mv",
            LabelModelKind::Ds => "ds",
            LabelModelKind::Triplet => "triplet",
        }
    }
}

impl std::str::FromStr for LabelModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mv" => Ok(Self::Mv),
            "ds" => Ok(Self::Ds),
            "triplet" => Ok(Self::Triplet),
            other => Err(Error::Config(format!(
                "unknown label model {other:?}; expected mv, ds or triplet"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelModelConfig {
    pub label_model: LabelModelKind,
    pub tol: f64,
    pub max_iter: usize,
    /// Hold the class prior at the dataset prior instead of learning it.
    pub fixed_prior: bool,
    /// Full per-class confusion matrices instead of one accuracy per LF.
    pub full_confusion: bool,
    /// Random EM starts beyond majority vote and its mirror image.
    pub restarts: usize,
}

impl Default for LabelModelConfig {
    fn default() -> Self {
        Self {
            label_model: LabelModelKind::Ds,
            tol: 1e-6,
            max_iter: 1000,
            fixed_prior: false,
            full_confusion: false,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

impl LabelModelConfig {
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("config serializes"))
    }
}

/// What `labels.meta.json` records about a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMeta {
    pub model: String,
    pub config_hash: String,
    pub iterations: usize,
    pub log_likelihood: Option<f64>,
    pub lf_names: Vec<String>,
    /// Per-LF accuracy estimates: α for Dawid-Skene, signed `a` for
    /// triplets, empty for majority vote.
    pub accuracies: Vec<f64>,
    pub prior: Vec<f64>,
    /// Labeling functions whose estimate used a fallback.
    #[serde(default)]
    pub flagged: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LabelOutput {
    pub soft: SoftLabels,
    pub meta: LabelMeta,
}

/// Runs the configured label model. `prior` is the dataset prior: the
/// fallback for all-abstain rows, the initial value for a learned prior,
/// and the fixed value otherwise.
pub fn fit_label_model(
    matrix: &VoteMatrix,
    prior: &[f64],
    config: &LabelModelConfig,
) -> Result<LabelOutput> {
    let config_hash = config.hash();
    match config.label_model {
        LabelModelKind::Mv => Ok(LabelOutput {
            soft: majority_vote(matrix, prior)?,
            meta: LabelMeta {
                model: "mv".into(),
                config_hash,
                iterations: 0,
                log_likelihood: None,
                lf_names: matrix.lf_names.clone(),
                accuracies: Vec::new(),
                prior: prior.to_vec(),
                flagged: Vec::new(),
            },
        }),
        LabelModelKind::Ds => {
            let ds = DawidSkeneConfig {
                tol: config.tol,
                max_iter: config.max_iter,
                fixed_prior: config.fixed_prior.then(|| prior.to_vec()),
                init_prior: Some(prior.to_vec()),
                full_confusion: config.full_confusion,
                restarts: config.restarts,
                seed: 0,
            };
            let fit = fit_dawid_skene(matrix, prior.len(), &ds)?;
            let soft = infer(&fit.params, matrix)?;
            Ok(LabelOutput {
                soft,
                meta: LabelMeta {
                    model: "ds".into(),
                    config_hash,
                    iterations: fit.iterations,
                    log_likelihood: fit.log_likelihood.last().copied(),
                    lf_names: matrix.lf_names.clone(),
                    accuracies: fit.params.alpha.clone(),
                    prior: fit.params.prior.clone(),
                    flagged: Vec::new(),
                },
            })
        }
        LabelModelKind::Triplet => {
            let fit = fit_triplets(matrix, prior)?;
            let soft = fit.params.posterior(matrix)?;
            Ok(LabelOutput {
                soft,
                meta: LabelMeta {
                    model: "triplet".into(),
                    config_hash,
                    iterations: 0,
                    log_likelihood: None,
                    lf_names: matrix.lf_names.clone(),
                    accuracies: fit.params.accuracy.clone(),
                    prior: prior.to_vec(),
                    flagged: fit
                        .fallback
                        .iter()
                        .zip(&matrix.lf_names)
                        .filter(|(f, _)| **f)
                        .map(|(_, n)| n.clone())
                        .collect(),
                },
            })
        }
    }
}

pub(crate) fn check_prior(prior: &[f64], matrix: &VoteMatrix) -> Result<()> {
    if prior.len() < 2 {
        return Err(Error::Contract("prior needs at least two classes".into()));
    }
    if prior.iter().any(|p| !(*p >= 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "prior {prior:?} is not a distribution"
        )));
    }
    if let Some(max) = matrix.max_label() {
        if max >= prior.len() {
            return Err(Error::Contract(format!(
                "vote for class {max} with only {} classes",
                prior.len()
            )));
        }
    }
    Ok(())
}
