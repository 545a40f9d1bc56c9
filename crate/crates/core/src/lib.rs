//! Programmatic weak supervision with prompted labeling functions.
//!
//! A labeling function here is a natural-language prompt plus a label map,
//! evaluated by a language-model backend. Votes from a suite of such
//! functions are optionally calibrated against content-free inputs, denoised
//! by a label model into probabilistic labels, and distilled into a small
//! linear classifier trained on those soft labels.
//!
//! Module map:
//!
//! - [`data`]: class spaces, examples, datasets, votes and vote matrices.
//! - [`prompt`]: templates, label maps, vote extraction, suite application.
//! - [`gateway`]: backend protocol, response cache, retries, mock backend.
//! - [`calibration`]: contextual calibration from null inputs.
//! - [`label_model`]: majority vote, Dawid-Skene EM, triplet method of moments.
//! - [`end_model`]: hashed features and soft-label linear classifier.
//! - [`analysis`]: labeling-function statistics, diversity, metrics.
//! - [`pipeline`]: run configuration, resumable runs, comparisons.

pub mod analysis;
pub mod calibration;
pub mod data;
pub mod end_model;
mod error;
pub mod fixtures;
pub mod gateway;
pub mod hashing;
pub mod label_model;
pub mod pipeline;
pub mod prompt;
pub mod synthetic;

pub use error::{Error, Result};

pub use data::{ClassSpace, Dataset, Example, Split, Vote, VoteMatrix};
pub use label_model::SoftLabels;
pub use prompt::{LabelMap, LabelerSuite, PromptTemplate, PromptedLF};
