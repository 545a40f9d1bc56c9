use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ClassSpace, VoteMatrix};
use crate::{Error, Result};

/// Coverage below this is flagged.
pub const LOW_COVERAGE: f64 = 0.02;

/// Votes for one emitted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub votes: usize,
    pub coverage: f64,
    /// Fraction of these votes that are correct (precision); null without
    /// votes.
    pub accuracy: Option<f64>,
    /// Fraction of gold examples of this class receiving a correct vote.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfStats {
    pub lf_name: String,
    pub coverage: f64,
    pub covered: usize,
    pub correct: usize,
    /// Accuracy on covered examples; null when nothing is covered.
    pub accuracy: Option<f64>,
    /// Keyed by class name.
    pub per_class: BTreeMap<String, ClassStats>,
    /// Classes the labeling function emitted.
    pub polarity: Vec<String>,
    pub low_coverage: bool,
}

pub fn lf_stats(matrix: &VoteMatrix, gold: &[usize], classes: &ClassSpace) -> Result<Vec<LfStats>> {
    if gold.len() != matrix.n() {
        return Err(Error::Contract(format!(
            "{} gold labels for {} rows",
            gold.len(),
            matrix.n()
        )));
    }
    let k = classes.k();
    let n = matrix.n();
    let mut gold_count = vec![0usize; k];
    for &g in gold {
        if g >= k {
            return Err(Error::Contract(format!(
                "gold label {g} outside {k} classes"
            )));
        }
        gold_count[g] += 1;
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (0..matrix.m())
        .map(|j| {
            let mut votes = vec![0usize; k];
            let mut hits = vec![0usize; k];
            for (v, &g) in matrix.column(j).zip(gold) {
                if let Some(l) = v.label {
                    if l >= k {
                        return Err(Error::Contract(format!("vote {l} outside {k} classes")));
                    }
                    votes[l] += 1;
                    hits[l] += (l == g) as usize;
                }
            }
            let covered: usize = votes.iter().sum();
            let correct: usize = hits.iter().sum();
            let coverage = frac(covered, n);
            let per_class = (0..k)
                .filter(|&c| votes[c] > 0)
                .map(|c| {
                    (
                        classes.name(c).to_string(),
                        ClassStats {
                            votes: votes[c],
                            coverage: frac(votes[c], n),
                            accuracy: Some(frac(hits[c], votes[c])),
                            recall: frac(hits[c], gold_count[c]),
                        },
                    )
                })
                .collect();
            Ok(LfStats {
                lf_name: matrix.lf_names[j].clone(),
                coverage,
                covered,
                correct,
                accuracy: (covered > 0).then(|| frac(correct, covered)),
                per_class,
                polarity: (0..k)
                    .filter(|&c| votes[c] > 0)
                    .map(|c| classes.name(c).to_string())
                    .collect(),
                low_coverage: coverage < LOW_COVERAGE,
            })
        })
        .collect()
}
