use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{softmax, CalibrationSet, CalibrationWeights};
use crate::data::{Example, ExtractionMode, Provenance, Split, Vote, VoteMatrix};
use crate::gateway::{CompleteRequest, Gateway, ScoreRequest};
use crate::{Error, Result};

use super::{Extraction, LabelerSuite, PromptedLF};

/// Completions requested per query in completion mode.
pub const COMPLETION_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApplyOptions {
    /// Upper bound on in-flight backend queries.
    pub concurrency: usize,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        Self { concurrency: 8 }
    }
}

/// Everything one (labeling function, example) query produced.
#[derive(Debug, Clone, PartialEq)]
pub struct LfOutcome {
    pub prompt: String,
    /// Answer strings with their probabilities before calibration:
    /// candidates in score mode, completions in completion mode.
    pub scored: Vec<(String, f64)>,
    /// Calibrated candidate probabilities, when weights were supplied.
    pub calibrated: Option<Vec<f64>>,
    /// Extraction from the probabilities actually used.
    pub extraction: Extraction,
    /// Extraction from the uncalibrated probabilities.
    pub raw_extraction: Extraction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryFailure {
    pub lf: String,
    pub example_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub matrix: VoteMatrix,
    /// Votes from the same raw scores without calibration; present only
    /// when calibration was applied.
    pub uncalibrated: Option<VoteMatrix>,
    pub failures: Vec<QueryFailure>,
}

/// Queries one labeling function on one example.
pub fn run_lf(
    lf: &PromptedLF,
    example: &Example,
    gateway: &Gateway,
    weights: Option<&CalibrationWeights>,
) -> Result<LfOutcome> {
    let prompt = lf.render(example)?;
    match lf.mode {
        ExtractionMode::Score => {
            let resp = gateway.score(&ScoreRequest::new(
                &lf.backend,
                prompt.clone(),
                &lf.candidates,
            ))?;
            let raw = softmax(&resp.logprobs);
            let scored: Vec<(String, f64)> = lf
                .candidates
                .iter()
                .cloned()
                .zip(raw.iter().copied())
                .collect();
            let raw_extraction = lf.extract(&scored)?;
            let (calibrated, extraction) = match weights {
                Some(w) => {
                    let q = w.apply(&raw)?;
                    let pairs: Vec<(String, f64)> = lf
                        .candidates
                        .iter()
                        .cloned()
                        .zip(q.iter().copied())
                        .collect();
                    let e = lf.extract(&pairs)?;
                    (Some(q), e)
                }
                None => (None, raw_extraction.clone()),
            };
            Ok(LfOutcome {
                prompt,
                scored,
                calibrated,
                extraction,
                raw_extraction,
            })
        }
        ExtractionMode::Complete => {
            let comps = gateway.complete(&CompleteRequest {
                backend: lf.backend.clone(),
                prompt: prompt.clone(),
                top_k: COMPLETION_TOP_K,
            })?;
            let logprobs: Vec<f64> = comps.iter().map(|c| c.logprob).collect();
            let scored: Vec<(String, f64)> = comps
                .iter()
                .map(|c| c.text.clone())
                .zip(softmax(&logprobs))
                .collect();
            let pairs: Vec<(String, f64)> =
                comps.into_iter().map(|c| (c.text, c.logprob)).collect();
            let extraction = lf.extract_completions(&pairs)?;
            Ok(LfOutcome {
                prompt,
                scored,
                calibrated: None,
                raw_extraction: extraction.clone(),
                extraction,
            })
        }
    }
}

type Cell = std::result::Result<(Vote, Vote), QueryFailure>;

/// Applies every labeling function of `suite` to every example of `split`.
///
/// Backend failures that survive retries become abstentions with
/// confidence 0 and are listed in [`SuiteOutput::failures`]; any other
/// error aborts. Row order follows the split, column order the suite, and
/// the result does not depend on query completion order.
pub fn apply_suite(
    suite: &LabelerSuite,
    split: &Split,
    gateway: &Gateway,
    calibration: Option<&CalibrationSet>,
    options: &ApplyOptions,
) -> Result<SuiteOutput> {
    for lf in &suite.lfs {
        if !gateway.has_backend(&lf.backend) {
            return Err(Error::Config(format!(
                "`{}` uses unregistered backend `{}`",
                lf.name, lf.backend
            )));
        }
    }
    suite.check_split(split)?;
    let weights: Vec<Option<&CalibrationWeights>> = suite
        .lfs
        .iter()
        .map(|lf| match (calibration, lf.mode) {
            (Some(set), ExtractionMode::Score) => set
                .get(&lf.name)
                .ok_or_else(|| Error::Contract(format!("no calibration weights for `{}`", lf.name)))
                .map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;

    let m = suite.lfs.len();
    let n = split.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start query pool: {e}")))?;
    let cells: Vec<Result<Cell>> = pool.install(|| {
        (0..n * m)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / m, idx % m);
                let lf = &suite.lfs[j];
                let ex = &split.examples[i];
                match run_lf(lf, ex, gateway, weights[j]) {
                    Ok(o) => Ok(Ok((o.extraction.vote, o.raw_extraction.vote))),
                    Err(e) if e.is_backend() => Ok(Err(QueryFailure {
                        lf: lf.name.clone(),
                        example_id: ex.id.clone(),
                        error: e.to_string(),
                    })),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(n);
    let mut raw_rows = Vec::with_capacity(n);
    let mut failures = Vec::new();
    let mut cells = cells.into_iter();
    for _ in 0..n {
        let mut row = Vec::with_capacity(m);
        let mut raw_row = Vec::with_capacity(m);
        for _ in 0..m {
            match cells.next().expect("n * m cells")? {
                Ok((v, raw)) => {
                    row.push(v);
                    raw_row.push(raw);
                }
                Err(f) => {
                    log::warn!("`{}` on `{}`: {}", f.lf, f.example_id, f.error);
                    row.push(Vote::abstain(0.0));
                    raw_row.push(Vote::abstain(0.0));
                    failures.push(f);
                }
            }
        }
        rows.push(row);
        raw_rows.push(raw_row);
    }

    let provenance = |calibrated: bool| -> BTreeMap<String, Provenance> {
        suite
            .lfs
            .iter()
            .zip(&weights)
            .map(|(lf, w)| {
                (
                    lf.name.clone(),
                    Provenance {
                        backend: lf.backend.clone(),
                        calibrated: calibrated && w.is_some(),
                        threshold: lf.threshold,
                        mode: lf.mode,
                    },
                )
            })
            .collect()
    };
    let mut matrix = VoteMatrix::new(suite.names(), split.ids(), rows, split.name.clone())?;
    matrix.provenance = provenance(true);
    let uncalibrated = match calibration {
        Some(_) => {
            let mut raw =
                VoteMatrix::new(suite.names(), split.ids(), raw_rows, split.name.clone())?;
            raw.provenance = provenance(false);
            Some(raw)
        }
        None => None,
    };
    Ok(SuiteOutput {
        matrix,
        uncalibrated,
        failures,
    })
}
