use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::VoteMatrix;
use crate::{Error, Result};

/// Contingency counts for a pair over examples where both vote. The first
/// index is the first LF's correctness, the second the other's (1 =
/// correct).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiversityCounts {
    pub n00: usize,
    pub n10: usize,
    pub n01: usize,
    pub n11: usize,
    pub n_total: usize,
}

/// Measures normalized by the split size, not by joint coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub agreement: f64,
    pub disagreement: f64,
    pub double_fault: f64,
    pub double_correct: f64,
}

pub fn diversity_counts(
    matrix: &VoteMatrix,
    gold: &[usize],
    i: usize,
    j: usize,
) -> Result<DiversityCounts> {
    if i == j {
        return Err(Error::Contract(
            "diversity needs two distinct labeling functions".into(),
        ));
    }
    if i >= matrix.m() || j >= matrix.m() {
        return Err(Error::Contract(format!("pair ({i}, {j}) out of range")));
    }
    if gold.len() != matrix.n() {
        return Err(Error::Contract(format!(
            "{} gold labels for {} rows",
            gold.len(),
            matrix.n()
        )));
    }
    let mut c = DiversityCounts {
        n_total: matrix.n(),
        ..Default::default()
    };
    for (row, &g) in matrix.rows.iter().zip(gold) {
        if let (Some(a), Some(b)) = (row[i].label, row[j].label) {
            match (a == g, b == g) {
                (false, false) => c.n00 += 1,
                (true, false) => c.n10 += 1,
                (false, true) => c.n01 += 1,
                (true, true) => c.n11 += 1,
            }
        }
    }
    Ok(c)
}

impl DiversityCounts {
    pub fn measures(&self) -> Diversity {
        let n = self.n_total as f64;
        let f = |x: usize| if self.n_total == 0 { 0.0 } else { x as f64 / n };
        Diversity {
            agreement: f(self.n00 + self.n11),
            disagreement: f(self.n10 + self.n01),
            double_fault: f(self.n00),
            double_correct: f(self.n11),
        }
    }
}

pub fn diversity(matrix: &VoteMatrix, gold: &[usize], i: usize, j: usize) -> Result<Diversity> {
    Ok(diversity_counts(matrix, gold, i, j)?.measures())
}

/// All pairwise measures; diagonal cells are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub lf_names: Vec<String>,
    pub agreement: Vec<Vec<Option<f64>>>,
    pub disagreement: Vec<Vec<Option<f64>>>,
    pub double_fault: Vec<Vec<Option<f64>>>,
    pub double_correct: Vec<Vec<Option<f64>>>,
}

impl DiversityReport {
    pub fn measure(&self, name: &str) -> Option<&Vec<Vec<Option<f64>>>> {
        match name {
            "agreement" => Some(&self.agreement),
            "disagreement" => Some(&self.disagreement),
            "double_fault" => Some(&self.double_fault),
            "double_correct" => Some(&self.double_correct),
            _ => None,
        }
    }
}

pub fn diversity_report(matrix: &VoteMatrix, gold: &[usize]) -> Result<DiversityReport> {
    let m = matrix.m();
    let cells: Vec<Option<Diversity>> = (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / m, idx % m);
            if i == j {
                Ok(None)
            } else {
                diversity(matrix, gold, i, j).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let grid = |f: fn(&Diversity) -> f64| -> Vec<Vec<Option<f64>>> {
        (0..m)
            .map(|i| (0..m).map(|j| cells[i * m + j].as_ref().map(f)).collect())
            .collect()
    };
    Ok(DiversityReport {
        lf_names: matrix.lf_names.clone(),
        agreement: grid(|d| d.agreement),
        disagreement: grid(|d| d.disagreement),
        double_fault: grid(|d| d.double_fault),
        double_correct: grid(|d| d.double_correct),
    })
}
