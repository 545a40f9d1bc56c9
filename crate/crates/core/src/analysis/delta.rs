use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::lf_stats;
use crate::data::{ClassSpace, VoteMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub delta_coverage: f64,
    /// Null when either side casts no vote for the class.
    pub delta_accuracy: Option<f64>,
}

/// Calibrated minus uncalibrated, overall and per emitted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDelta {
    pub lf_name: String,
    pub delta_coverage: f64,
    pub delta_accuracy: Option<f64>,
    pub per_class: BTreeMap<String, ClassDelta>,
}

pub fn calibration_delta_report(
    uncalibrated: &VoteMatrix,
    calibrated: &VoteMatrix,
    gold: &[usize],
    classes: &ClassSpace,
) -> Result<Vec<CalibrationDelta>> {
    if uncalibrated.lf_names != calibrated.lf_names {
        return Err(Error::Contract(format!(
            "labeling functions differ: {:?} vs {:?}",
            uncalibrated.lf_names, calibrated.lf_names
        )));
    }
    if uncalibrated.example_ids != calibrated.example_ids {
        return Err(Error::Contract("matrices cover different examples".into()));
    }
    let before = lf_stats(uncalibrated, gold, classes)?;
    let after = lf_stats(calibrated, gold, classes)?;
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    Ok(before
        .into_iter()
        .zip(after)
        .map(|(b, a)| {
            let per_class = classes
                .names()
                .iter()
                .filter_map(|name| {
                    let (cb, ca) = (b.per_class.get(name), a.per_class.get(name));
                    if cb.is_none() && ca.is_none() {
                        return None;
                    }
                    let cov = |c: Option<&super::ClassStats>| c.map_or(0.0, |c| c.coverage);
                    let acc = |c: Option<&super::ClassStats>| c.and_then(|c| c.accuracy);
                    Some((
                        name.clone(),
                        ClassDelta {
                            delta_coverage: cov(ca) - cov(cb),
                            delta_accuracy: diff(acc(ca), acc(cb)),
                        },
                    ))
                })
                .collect();
            CalibrationDelta {
                lf_name: a.lf_name,
                delta_coverage: a.coverage - b.coverage,
                delta_accuracy: diff(a.accuracy, b.accuracy),
                per_class,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> ClassSpace {
        ClassSpace::binary("HAM", "SPAM")
    }

    #[test]
    fn identical_matrices_have_zero_deltas() {
        let m =
            VoteMatrix::from_codes(&["a", "b"], &[vec![1, 0], vec![-1, 0], vec![1, 1]]).unwrap();
        let r = calibration_delta_report(&m, &m, &[1, 0, 0], &classes()).unwrap();
        for d in r {
            assert_eq!(d.delta_coverage, 0.0);
            assert_eq!(d.delta_accuracy, Some(0.0));
            assert!(d.per_class.values().all(|c| c.delta_coverage == 0.0));
        }
    }

    #[test]
    fn ten_new_correct_votes_on_a_hundred() {
        let gold: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let before: Vec<Vec<i64>> = (0..100)
            .map(|i| {
                if i < 40 {
                    vec![(i % 2) as i64]
                } else {
                    vec![-1]
                }
            })
            .collect();
        let mut after = before.clone();
        for (i, row) in after.iter_mut().enumerate().skip(40).take(10) {
            row[0] = (i % 2) as i64;
        }
        let b = VoteMatrix::from_codes(&["a"], &before).unwrap();
        let a = VoteMatrix::from_codes(&["a"], &after).unwrap();
        let r = calibration_delta_report(&b, &a, &gold, &classes()).unwrap();
        assert!((r[0].delta_coverage - 0.10).abs() < 1e-12);
        assert_eq!(r[0].delta_accuracy, Some(0.0));
    }

    #[test]
    fn mismatched_lf_sets_are_rejected() {
        let a = VoteMatrix::from_codes(&["a"], &[vec![1]]).unwrap();
        let b = VoteMatrix::from_codes(&["b"], &[vec![1]]).unwrap();
        assert!(calibration_delta_report(&a, &b, &[1], &classes()).is_err());
    }
}
