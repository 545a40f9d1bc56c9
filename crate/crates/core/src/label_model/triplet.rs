use serde::{Deserialize, Serialize};

use crate::data::VoteMatrix;
use crate::{Error, Result};

use super::{check_prior, hard_labels, majority_vote, SoftLabels};

/// Pairs with a smaller absolute moment are not used as denominators.
pub const MOMENT_DELTA: f64 = 1e-3;

/// Bound on |a|.
pub const A_MAX: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletParams {
    pub lf_names: Vec<String>,
    /// Signed accuracy on the ±1 scale: `2 P(correct | vote) - 1`.
    pub accuracy: Vec<f64>,
    /// `moments[j][k]`: mean of λ_j λ_k where both vote; `None` when they
    /// never do. The diagonal is 1.
    pub moments: Vec<Vec<Option<f64>>>,
    pub prior: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TripletFit {
    pub params: TripletParams,
    /// True where the estimate fell back to agreement with majority vote.
    pub fallback: Vec<bool>,
}

/// Class 1 is +1, class 0 is −1, abstention 0.
fn lambda(label: Option<usize>) -> f64 {
    match label {
        Some(1) => 1.0,
        Some(_) => -1.0,
        None => 0.0,
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Unsigned accuracy estimates from a moment matrix: for each `i`, the
/// median over pairs `j < k` (both distinct from `i`, all three moments
/// defined, `|M_jk| > δ`) of `sqrt(|M_ij M_ik / M_jk|)`, clamped to
/// [`A_MAX`]. `None` when no pair is admissible.
pub fn triplet_accuracies(moments: &[Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let m = moments.len();
    (0..m)
        .map(|i| {
            let mut est = Vec::new();
            for j in 0..m {
                for k in (j + 1)..m {
                    if j == i || k == i {
                        continue;
                    }
                    if let (Some(mij), Some(mik), Some(mjk)) =
                        (moments[i][j], moments[i][k], moments[j][k])
                    {
                        if mjk.abs() > MOMENT_DELTA {
                            est.push((mij * mik / mjk).abs().sqrt());
                        }
                    }
                }
            }
            (!est.is_empty()).then(|| median(&mut est).min(A_MAX))
        })
        .collect()
}

fn moments(matrix: &VoteMatrix) -> Vec<Vec<Option<f64>>> {
    let m = matrix.m();
    let mut sums = vec![vec![0.0; m]; m];
    let mut counts = vec![vec![0usize; m]; m];
    for row in &matrix.rows {
        let l: Vec<f64> = row.iter().map(|v| lambda(v.label)).collect();
        for j in 0..m {
            if l[j] == 0.0 {
                continue;
            }
            for k in j..m {
                if l[k] != 0.0 {
                    sums[j][k] += l[j] * l[k];
                    counts[j][k] += 1;
                }
            }
        }
    }
    let mut out = vec![vec![None; m]; m];
    for j in 0..m {
        out[j][j] = Some(1.0);
        for k in (j + 1)..m {
            if counts[j][k] > 0 {
                let v = sums[j][k] / counts[j][k] as f64;
                out[j][k] = Some(v);
                out[k][j] = Some(v);
            }
        }
    }
    out
}

impl TripletParams {
    /// Log-odds of class 1 for one row.
    fn log_odds(&self, row: &[crate::data::Vote]) -> f64 {
        let mut z = (self.prior[1] / self.prior[0]).ln();
        for (v, a) in row.iter().zip(&self.accuracy) {
            z += lambda(v.label) * ((1.0 + a) / (1.0 - a)).ln();
        }
        z
    }

    /// Posterior per row. Each vote contributes `λ log((1+a)/(1-a))` to
    /// the log-odds of class 1; the half-angle form `½ log((1+a)/(1-a))`
    /// is the same quantity measured on the ±1 scale.
    pub fn posterior(&self, matrix: &VoteMatrix) -> Result<SoftLabels> {
        if self.lf_names != matrix.lf_names {
            return Err(Error::Contract(format!(
                "parameters fitted for {:?}, matrix has {:?}",
                self.lf_names, matrix.lf_names
            )));
        }
        let rows = matrix
            .rows
            .iter()
            .map(|row| {
                let p1 = 1.0 / (1.0 + (-self.log_odds(row)).exp());
                vec![1.0 - p1, p1]
            })
            .collect();
        SoftLabels::new(
            matrix.example_ids.clone(),
            rows,
            "triplet",
            self.prior.clone(),
        )
    }
}

/// Closed-form binary accuracy estimation from pairwise moments.
pub fn fit_triplets(matrix: &VoteMatrix, prior: &[f64]) -> Result<TripletFit> {
    if prior.len() != 2 {
        return Err(Error::Contract("triplet method is binary only".into()));
    }
    if matrix.m() < 3 {
        return Err(Error::Contract(format!(
            "triplet requires m ≥ 3; use ds (got m = {})",
            matrix.m()
        )));
    }
    check_prior(prior, matrix)?;
    let mom = moments(matrix);
    let est = triplet_accuracies(&mom);

    let mv = hard_labels(&majority_vote(matrix, prior)?);
    let mut fallback = vec![false; matrix.m()];
    let mut accuracy: Vec<f64> = est
        .iter()
        .enumerate()
        .map(|(j, a)| match a {
            Some(a) => *a,
            None => {
                fallback[j] = true;
                let (agree, covered) = matrix
                    .column(j)
                    .zip(&mv)
                    .filter_map(|(v, &y)| v.label.map(|l| l == y))
                    .fold((0usize, 0usize), |(a, c), hit| (a + hit as usize, c + 1));
                if covered == 0 {
                    0.0
                } else {
                    (2.0 * agree as f64 / covered as f64 - 1.0).clamp(-A_MAX, A_MAX)
                }
            }
        })
        .collect();

    let mut params = TripletParams {
        lf_names: matrix.lf_names.clone(),
        accuracy: accuracy.clone(),
        moments: mom,
        prior: prior.to_vec(),
    };
    // Agreement of the model's hard label with majority vote, on the ±1 scale.
    let agreement: f64 = matrix
        .rows
        .iter()
        .zip(&mv)
        .filter(|(row, _)| row.iter().any(|v| !v.is_abstain()))
        .map(|(row, &y)| {
            let z = params.log_odds(row) - (prior[1] / prior[0]).ln();
            z.signum() * if y == 1 { 1.0 } else { -1.0 }
        })
        .sum();
    if agreement < 0.0 {
        accuracy.iter_mut().for_each(|a| *a = -*a);
        params.accuracy = accuracy;
    }
    Ok(TripletFit { params, fallback })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_moments_recover_accuracies() {
        let a = [0.6f64, 0.4, 0.2];
        let mut m: Vec<Vec<Option<f64>>> = vec![vec![Some(1.0); 3]; 3];
        for j in 0..3 {
            for k in 0..3 {
                if j != k {
                    m[j][k] = Some(a[j] * a[k]);
                }
            }
        }
        assert!((m[0][1].unwrap() - 0.24).abs() < 1e-15);
        let est = triplet_accuracies(&m);
        for (e, t) in est.iter().zip(a) {
            assert!((e.unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_columns_clamp() {
        let rows: Vec<Vec<i64>> = [1, 0, 1, 1, 0].iter().map(|&y| vec![y; 3]).collect();
        let m = VoteMatrix::from_codes(&["a", "b", "c"], &rows).unwrap();
        let fit = fit_triplets(&m, &[0.5, 0.5]).unwrap();
        assert_eq!(fit.params.accuracy, vec![A_MAX; 3]);
        assert!(fit.fallback.iter().all(|f| !f));
    }

    #[test]
    fn lf_without_joint_coverage_falls_back() {
        // `d` never votes together with the others.
        let rows = vec![
            vec![1, 1, 1, -1],
            vec![0, 0, 0, -1],
            vec![1, 0, 1, -1],
            vec![0, 0, 1, -1],
            vec![1, 1, 1, -1],
            vec![-1, -1, -1, 1],
        ];
        let m = VoteMatrix::from_codes(&["a", "b", "c", "d"], &rows).unwrap();
        let fit = fit_triplets(&m, &[0.5, 0.5]).unwrap();
        assert_eq!(fit.fallback, vec![false, false, false, true]);
        // Its only vote agrees with majority vote (which is its own vote).
        assert_eq!(fit.params.accuracy[3], A_MAX);
    }

    #[test]
    fn posterior_is_bayes_for_known_accuracies() {
        let params = TripletParams {
            lf_names: vec!["a".into(), "b".into(), "c".into()],
            accuracy: vec![0.6, 0.6, 0.0],
            moments: vec![vec![None; 3]; 3],
            prior: vec![0.5, 0.5],
        };
        let m =
            VoteMatrix::from_codes(&["a", "b", "c"], &[vec![1, 1, 0], vec![-1, -1, -1]]).unwrap();
        let soft = params.posterior(&m).unwrap();
        // P(correct) = 0.8 for both: 0.64 / (0.64 + 0.04)
        assert!((soft.rows[0][1] - 0.64 / 0.68).abs() < 1e-12);
        assert!((soft.rows[1][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn needs_three_lfs_and_two_classes() {
        let m = VoteMatrix::from_codes(&["a", "b"], &[vec![1, 0]]).unwrap();
        let err = fit_triplets(&m, &[0.5, 0.5]).unwrap_err().to_string();
        assert!(err.contains("use ds"));
        let m = VoteMatrix::from_codes(&["a", "b", "c"], &[vec![1, 0, 1]]).unwrap();
        assert!(fit_triplets(&m, &[0.3, 0.3, 0.4]).is_err());
    }
}
