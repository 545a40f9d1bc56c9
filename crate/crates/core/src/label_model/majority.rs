use crate::data::VoteMatrix;
use crate::{Error, Result};

use super::{check_prior, SoftLabels};

/// Normalized vote histogram per row; all-abstain rows get the prior.
pub fn majority_vote(matrix: &VoteMatrix, prior: &[f64]) -> Result<SoftLabels> {
    if matrix.m() == 0 {
        return Err(Error::Contract(
            "majority vote needs at least one labeling function".into(),
        ));
    }
    check_prior(prior, matrix)?;
    let k = prior.len();
    let rows = matrix
        .rows
        .iter()
        .map(|row| {
            let mut counts = vec![0.0; k];
            let mut total = 0.0;
            for label in row.iter().filter_map(|v| v.label) {
                counts[label] += 1.0;
                total += 1.0;
            }
            if total == 0.0 {
                prior.to_vec()
            } else {
                counts.iter().map(|c| c / total).collect()
            }
        })
        .collect();
    SoftLabels::new(matrix.example_ids.clone(), rows, "mv", prior.to_vec())
}
