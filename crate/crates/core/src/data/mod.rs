//! Class spaces, examples, datasets, votes and vote matrices.

mod io;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    load_dataset, read_vote_matrix, sidecar_paths, write_dataset, write_vote_matrix, SPLITS,
};

/// Tolerance on the class prior summing to one.
pub const PRIOR_TOLERANCE: f64 = 1e-9;

/// Serialized value of an abstaining vote.
pub const ABSTAIN_CODE: i64 = -1;

/// Ordered, named set of classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpace {
    names: Vec<String>,
    positive: usize,
}

impl ClassSpace {
    pub fn new(names: Vec<String>, positive: usize) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Validation(format!(
                "a class space needs at least two classes, got {}",
                names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate class name {name:?}")));
            }
        }
        if positive >= names.len() {
            return Err(Error::Validation(format!(
                "positive index {positive} out of range for {} classes",
                names.len()
            )));
        }
        Ok(Self { names, positive })
    }

    /// Binary class space with the second class as positive.
    pub fn binary(negative: &str, positive: &str) -> Self {
        Self::new(vec![negative.to_string(), positive.to_string()], 1)
            .expect("distinct binary class names")
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn positive_index(&self) -> usize {
        self.positive
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One labeling-function output: a class index or an abstention, with the
/// extractor's confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub label: Option<usize>,
    pub confidence: f64,
}

impl Vote {
    pub fn class(label: usize, confidence: f64) -> Self {
        Self {
            label: Some(label),
            confidence,
        }
    }

    pub fn abstain(confidence: f64) -> Self {
        Self {
            label: None,
            confidence,
        }
    }

    pub fn is_abstain(&self) -> bool {
        self.label.is_none()
    }

    pub fn code(&self) -> i64 {
        self.label.map_or(ABSTAIN_CODE, |c| c as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    /// Placeholder name (lowercase) to text.
    pub fields: BTreeMap<String, String>,
    pub gold: Option<usize>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold: Option<usize>) -> Self {
        let mut fields = BTreeMap::new();
        fields.insert("text".to_string(), text.into());
        Self {
            id: id.into(),
            fields,
            gold,
        }
    }

    pub fn with_field(mut self, name: &str, value: impl Into<String>) -> Self {
        self.fields.insert(name.to_ascii_lowercase(), value.into());
        self
    }

    /// Field lookup by placeholder name, case-insensitive.
    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields
            .get(&name.to_ascii_lowercase())
            .map(String::as_str)
    }

    pub fn text(&self) -> &str {
        self.field("text").unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub name: String,
    pub examples: Vec<Example>,
}

impl Split {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Self {
        Self {
            name: name.into(),
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The view a label model is allowed to see: gold labels stripped.
    pub fn unlabeled(&self) -> Split {
        Split {
            name: self.name.clone(),
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    gold: None,
                    ..e.clone()
                })
                .collect(),
        }
    }

    /// Gold labels for every example, or `None` if any is missing.
    pub fn gold(&self) -> Option<Vec<usize>> {
        self.examples.iter().map(|e| e.gold).collect()
    }

    pub fn require_gold(&self) -> Result<Vec<usize>> {
        self.gold()
            .ok_or_else(|| Error::Contract(format!("split `{}` lacks gold labels", self.name)))
    }

    pub fn ids(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.id.clone()).collect()
    }

    fn duplicate_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut dups = BTreeSet::new();
        for e in &self.examples {
            if !seen.insert(e.id.as_str()) {
                dups.insert(e.id.clone());
            }
        }
        dups.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_space: ClassSpace,
    pub splits: BTreeMap<String, Split>,
    pub prior: Vec<f64>,
}

impl Dataset {
    pub fn new(class_space: ClassSpace, splits: Vec<Split>, prior: Vec<f64>) -> Result<Self> {
        let dataset = Self {
            class_space,
            splits: splits.into_iter().map(|s| (s.name.clone(), s)).collect(),
            prior,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::Validation(format!("dataset has no split `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_space.k();
        if self.prior.len() != k {
            return Err(Error::Validation(format!(
                "prior has {} entries for {k} classes",
                self.prior.len()
            )));
        }
        if self.prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation("prior entries must lie in [0, 1]".into()));
        }
        let total: f64 = self.prior.iter().sum();
        if (total - 1.0).abs() > PRIOR_TOLERANCE {
            return Err(Error::Validation(format!(
                "prior sums to {total}, expected 1"
            )));
        }
        for split in self.splits.values() {
            let dups = split.duplicate_ids();
            if !dups.is_empty() {
                return Err(Error::Validation(format!(
                    "split `{}` has duplicate example ids: {}",
                    split.name,
                    dups.join(", ")
                )));
            }
            for e in &split.examples {
                if e.id.is_empty() {
                    return Err(Error::Validation(format!(
                        "split `{}` has an example with an empty id",
                        split.name
                    )));
                }
                if let Some(g) = e.gold {
                    if g >= k {
                        return Err(Error::Validation(format!(
                            "example `{}` has label {g} outside [0, {k})",
                            e.id
                        )));
                    }
                }
            }
            if (split.name == "valid" || split.name == "test") && split.gold().is_none() {
                return Err(Error::Validation(format!(
                    "split `{}` must carry a gold label on every example",
                    split.name
                )));
            }
        }
        Ok(())
    }
}

/// How a labeling function's vote was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    #[default]
    Score,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub calibrated: bool,
    pub threshold: f64,
    #[serde(default)]
    pub mode: ExtractionMode,
}

/// Votes of `m` labeling functions over the `n` examples of one split,
/// rows in canonical example order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMatrix {
    pub lf_names: Vec<String>,
    pub example_ids: Vec<String>,
    pub rows: Vec<Vec<Vote>>,
    pub split: String,
    pub provenance: BTreeMap<String, Provenance>,
}

impl VoteMatrix {
    pub fn new(
        lf_names: Vec<String>,
        example_ids: Vec<String>,
        rows: Vec<Vec<Vote>>,
        split: impl Into<String>,
    ) -> Result<Self> {
        let matrix = Self {
            lf_names,
            example_ids,
            rows,
            split: split.into(),
            provenance: BTreeMap::new(),
        };
        matrix.validate()?;
        Ok(matrix)
    }

    /// Builds a matrix from integer codes (`-1` abstains), confidence 1.
    pub fn from_codes(lf_names: &[&str], codes: &[Vec<i64>]) -> Result<Self> {
        let rows = codes
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| {
                        if c < 0 {
                            Vote::abstain(1.0)
                        } else {
                            Vote::class(c as usize, 1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let ids = (0..codes.len()).map(|i| format!("x{i}")).collect();
        Self::new(
            lf_names.iter().map(|s| s.to_string()).collect(),
            ids,
            rows,
            "train",
        )
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.lf_names.len();
        let mut seen = BTreeSet::new();
        for name in &self.lf_names {
            if !seen.insert(name) {
                return Err(Error::Validation(format!(
                    "duplicate labeling function {name:?}"
                )));
            }
        }
        if self.example_ids.len() != self.rows.len() {
            return Err(Error::Validation(format!(
                "{} example ids for {} rows",
                self.example_ids.len(),
                self.rows.len()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Validation(format!(
                    "row {i} has {} votes, expected {m}",
                    row.len()
                )));
            }
            for v in row {
                if !(0.0..=1.0).contains(&v.confidence) {
                    return Err(Error::Validation(format!(
                        "row {i} has confidence {} outside [0, 1]",
                        v.confidence
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.lf_names.len()
    }

    pub fn lf_index(&self, name: &str) -> Option<usize> {
        self.lf_names.iter().position(|n| n == name)
    }

    fn check_lf(&self, lf: usize) -> Result<()> {
        if lf >= self.m() {
            return Err(Error::Contract(format!(
                "labeling function index {lf} out of range (m = {})",
                self.m()
            )));
        }
        Ok(())
    }

    pub fn column(&self, lf: usize) -> impl Iterator<Item = &Vote> + '_ {
        self.rows.iter().map(move |row| &row[lf])
    }

    /// Fraction of examples on which `lf` votes; zero for an empty matrix.
    pub fn coverage(&self, lf: usize) -> Result<f64> {
        self.check_lf(lf)?;
        if self.n() == 0 {
            return Ok(0.0);
        }
        let covered = self.column(lf).filter(|v| !v.is_abstain()).count();
        Ok(covered as f64 / self.n() as f64)
    }

    /// Largest class index present, if any.
    pub fn max_label(&self) -> Option<usize> {
        self.rows.iter().flatten().filter_map(|v| v.label).max()
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<VoteMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.lf_index(n)
                    .ok_or_else(|| Error::Contract(format!("no labeling function `{n}`")))
            })
            .collect::<Result<_>>()?;
        Ok(VoteMatrix {
            lf_names: names.to_vec(),
            example_ids: self.example_ids.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&j| r[j]).collect())
                .collect(),
            split: self.split.clone(),
            provenance: names
                .iter()
                .filter_map(|n| self.provenance.get(n).map(|p| (n.clone(), p.clone())))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_space_rejects_bad_input() {
        assert!(ClassSpace::new(vec!["A".into()], 0).is_err());
        assert!(ClassSpace::new(vec!["A".into(), "A".into()], 0).is_err());
        assert!(ClassSpace::new(vec!["A".into(), "B".into()], 2).is_err());
        let cs = ClassSpace::binary("HAM", "SPAM");
        assert_eq!(cs.k(), 2);
        assert_eq!(cs.index_of("SPAM"), Some(1));
    }

    #[test]
    fn coverage_counts_non_abstains() {
        let m = VoteMatrix::from_codes(&["a"], &[vec![1], vec![-1], vec![0], vec![-1]]).unwrap();
        assert_eq!(m.coverage(0).unwrap(), 0.5);
        let none = VoteMatrix::from_codes(&["a"], &[vec![-1], vec![-1]]).unwrap();
        assert_eq!(none.coverage(0).unwrap(), 0.0);
        assert!(m.coverage(1).is_err());
    }

    #[test]
    fn coverage_of_empty_matrix_is_zero() {
        let m = VoteMatrix::from_codes(&["a", "b"], &[]).unwrap();
        assert_eq!(m.coverage(1).unwrap(), 0.0);
    }

    #[test]
    fn sms_shaped_column_coverage() {
        let codes: Vec<Vec<i64>> = (0..4571)
            .map(|i| vec![if i % 50 == 7 && i < 4500 { 1 } else { -1 }])
            .collect();
        let m = VoteMatrix::from_codes(&["kw"], &codes).unwrap();
        let votes = codes.iter().filter(|r| r[0] >= 0).count();
        assert_eq!(votes, 90);
        let cov = m.coverage(0).unwrap();
        assert_eq!(cov, 90.0 / 4571.0);
        assert!((cov - 0.0197).abs() < 1e-4);
    }

    #[test]
    fn unlabeled_view_strips_gold() {
        let split = Split::new("train", vec![Example::new("a", "t", Some(1))]);
        assert_eq!(split.unlabeled().examples[0].gold, None);
        assert_eq!(split.gold(), Some(vec![1]));
    }

    #[test]
    fn row_length_is_checked() {
        let err = VoteMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["x".into()],
            vec![vec![Vote::abstain(1.0)]],
            "train",
        );
        assert!(err.is_err());
    }
}
