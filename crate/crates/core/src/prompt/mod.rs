//! Prompted labeling functions: a template, a label map from answers to
//! classes (or abstention), the candidate answers to score, and a
//! confidence threshold.

mod apply;
mod template;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{ClassSpace, ExtractionMode, Split, Vote};
use crate::hashing::sha256_hex;
use crate::{Error, Result};

pub use apply::{apply_suite, run_lf, ApplyOptions, LfOutcome, QueryFailure, SuiteOutput};
pub use template::{Placeholder, PromptTemplate};

/// Label-map keyword for abstention.
pub const ABSTAIN: &str = "ABSTAIN";

/// Lowercase, trim, and strip one trailing `.`, `!` or `?`.
pub fn normalize_answer(answer: &str) -> String {
    let lowered = answer.trim().to_lowercase();
    let stripped = lowered.strip_suffix(['.', '!', '?']).unwrap_or(&lowered);
    stripped.trim().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapTarget {
    Class(usize),
    Abstain,
}

/// Outcome of looking an answer up in a label map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapped {
    Class(usize),
    Abstain,
    /// The answer is not a key of the map. Treated as abstention in vote
    /// matrices, kept distinct for diagnostics.
    Unmapped,
}

impl From<MapTarget> for Mapped {
    fn from(t: MapTarget) -> Self {
        match t {
            MapTarget::Class(c) => Mapped::Class(c),
            MapTarget::Abstain => Mapped::Abstain,
        }
    }
}

/// Normalized answer string to class or abstention, in definition order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    entries: IndexMap<String, MapTarget>,
}

impl LabelMap {
    pub fn new<S: AsRef<str>>(entries: impl IntoIterator<Item = (S, MapTarget)>) -> Result<Self> {
        let mut map = IndexMap::new();
        for (answer, target) in entries {
            let key = normalize_answer(answer.as_ref());
            if map.insert(key.clone(), target).is_some() {
                return Err(Error::Validation(format!(
                    "label map has two entries normalizing to {key:?}"
                )));
            }
        }
        Ok(Self { entries: map })
    }

    /// Parses `{answer: class-name | "ABSTAIN"}`.
    pub fn from_names(entries: &IndexMap<String, String>, classes: &ClassSpace) -> Result<Self> {
        let resolved = entries
            .iter()
            .map(|(answer, target)| {
                let t = if target == ABSTAIN {
                    MapTarget::Abstain
                } else {
                    MapTarget::Class(classes.index_of(target).ok_or_else(|| {
                        Error::Validation(format!("label map refers to unknown class {target:?}"))
                    })?)
                };
                Ok((answer.clone(), t))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(resolved)
    }

    pub fn to_names(&self, classes: &ClassSpace) -> IndexMap<String, String> {
        self.entries
            .iter()
            .map(|(k, t)| {
                let name = match t {
                    MapTarget::Class(c) => classes.name(*c).to_string(),
                    MapTarget::Abstain => ABSTAIN.to_string(),
                };
                (k.clone(), name)
            })
            .collect()
    }

    pub fn map_answer(&self, answer: &str) -> Mapped {
        self.entries
            .get(&normalize_answer(answer))
            .map_or(Mapped::Unmapped, |t| (*t).into())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Classes this map can emit.
    pub fn polarity(&self) -> BTreeSet<usize> {
        self.entries
            .values()
            .filter_map(|t| match t {
                MapTarget::Class(c) => Some(*c),
                MapTarget::Abstain => None,
            })
            .collect()
    }
}

/// Vote extracted from backend scores, with the diagnostic answer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub vote: Vote,
    /// Winning answer (candidate or completion token).
    pub answer: String,
    pub mapped: Mapped,
    /// Whether the threshold turned the winner into an abstention.
    pub below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptedLF {
    pub name: String,
    pub template: PromptTemplate,
    pub label_map: LabelMap,
    pub candidates: Vec<String>,
    pub threshold: f64,
    pub backend: String,
    /// Value for a `[KEYWORDS]` slot, when the template has one.
    pub keywords: Option<String>,
    pub mode: ExtractionMode,
}

impl PromptedLF {
    pub fn new(
        name: impl Into<String>,
        template: PromptTemplate,
        label_map: LabelMap,
        backend: impl Into<String>,
    ) -> Self {
        let candidates = label_map.keys().map(str::to_string).collect();
        Self {
            name: name.into(),
            template,
            label_map,
            candidates,
            threshold: 0.0,
            backend: backend.into(),
            keywords: None,
            mode: ExtractionMode::Score,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_candidates(mut self, candidates: Vec<String>) -> Self {
        self.candidates = candidates;
        self
    }

    pub fn with_keywords(mut self, keywords: impl Into<String>) -> Self {
        self.keywords = Some(keywords.into());
        self
    }

    pub fn with_mode(mut self, mode: ExtractionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Validation(
                "labeling function with empty name".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Validation(format!(
                "`{}`: threshold {} outside [0, 1]",
                self.name, self.threshold
            )));
        }
        if self.mode == ExtractionMode::Score {
            if self.candidates.is_empty() || self.candidates.len() > crate::gateway::MAX_CANDIDATES
            {
                return Err(Error::Validation(format!(
                    "`{}`: needs between 1 and {} candidates",
                    self.name,
                    crate::gateway::MAX_CANDIDATES
                )));
            }
            let mut seen = BTreeSet::new();
            for c in &self.candidates {
                if self.label_map.map_answer(c) == Mapped::Unmapped {
                    return Err(Error::Validation(format!(
                        "`{}`: candidate {c:?} is not a label-map key",
                        self.name
                    )));
                }
                if !seen.insert(normalize_answer(c)) {
                    return Err(Error::Validation(format!(
                        "`{}`: duplicate candidate {c:?}",
                        self.name
                    )));
                }
            }
        }
        if self
            .template
            .placeholders()
            .any(|p| p == Placeholder::Keywords)
            && self.keywords.is_none()
        {
            log::debug!("`{}` takes [KEYWORDS] from example fields", self.name);
        }
        Ok(())
    }

    /// Renders against a slot lookup, with this LF's keywords taking
    /// precedence for `[KEYWORDS]`.
    pub fn render_with<'a>(
        &'a self,
        mut lookup: impl FnMut(Placeholder) -> Option<&'a str>,
    ) -> Result<String> {
        self.template
            .render_with(|slot| match (slot, &self.keywords) {
                (Placeholder::Keywords, Some(k)) => Some(k.as_str()),
                _ => lookup(slot),
            })
    }

    pub fn render(&self, example: &crate::data::Example) -> Result<String> {
        self.render_with(|slot| example.field(slot.name()))
    }

    pub fn polarity(&self) -> BTreeSet<usize> {
        self.label_map.polarity()
    }

    /// Picks the most probable candidate and maps it. `scored` must name
    /// exactly this LF's candidates; probabilities are renormalized, ties go
    /// to the earlier candidate, and a winner below the threshold abstains.
    pub fn extract(&self, scored: &[(String, f64)]) -> Result<Extraction> {
        if scored.len() != self.candidates.len() {
            return Err(Error::Contract(format!(
                "`{}`: {} scores for {} candidates",
                self.name,
                scored.len(),
                self.candidates.len()
            )));
        }
        let mut probs = Vec::with_capacity(self.candidates.len());
        for cand in &self.candidates {
            let key = normalize_answer(cand);
            let p = scored
                .iter()
                .find(|(c, _)| normalize_answer(c) == key)
                .map(|(_, p)| *p)
                .ok_or_else(|| {
                    Error::Contract(format!("`{}`: no score for candidate {cand:?}", self.name))
                })?;
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Contract(format!(
                    "`{}`: invalid probability {p} for {cand:?}",
                    self.name
                )));
            }
            probs.push(p);
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::Contract(format!(
                "`{}`: candidate probabilities sum to zero",
                self.name
            )));
        }
        let (best, best_p) =
            probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bp), (i, &p)| {
                    if p > bp {
                        (i, p)
                    } else {
                        (bi, bp)
                    }
                });
        let confidence = (best_p / total).clamp(0.0, 1.0);
        let answer = self.candidates[best].clone();
        let mapped = self.label_map.map_answer(&answer);
        Ok(self.finish(answer, mapped, confidence))
    }

    /// Free-completion extraction: the first token of each completion (split
    /// on whitespace, `,`, `;` and `:`) is normalized and looked up; probability mass is summed per target and
    /// the heaviest target wins (ties to the first seen).
    pub fn extract_completions(&self, completions: &[(String, f64)]) -> Result<Extraction> {
        if completions.is_empty() {
            return Err(Error::Contract(format!("`{}`: no completions", self.name)));
        }
        let max_lp = completions
            .iter()
            .map(|(_, lp)| *lp)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut buckets: Vec<(Mapped, String, f64)> = Vec::new();
        let mut total = 0.0;
        for (text, logprob) in completions {
            let token = text
                .split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':'))
                .find(|t| !t.is_empty())
                .unwrap_or("");
            let mapped = self.label_map.map_answer(token);
            let p = (logprob - max_lp).exp();
            total += p;
            match buckets.iter_mut().find(|(m, _, _)| *m == mapped) {
                Some(b) => b.2 += p,
                None => buckets.push((mapped, normalize_answer(token), p)),
            }
        }
        let (mapped, answer, mass) = buckets
            .into_iter()
            .fold(None::<(Mapped, String, f64)>, |best, b| match best {
                Some(best) if best.2 >= b.2 => Some(best),
                _ => Some(b),
            })
            .expect("non-empty completions");
        Ok(self.finish(answer, mapped, (mass / total).clamp(0.0, 1.0)))
    }

    fn finish(&self, answer: String, mapped: Mapped, confidence: f64) -> Extraction {
        if confidence < self.threshold {
            return Extraction {
                vote: Vote::abstain(confidence),
                answer,
                mapped,
                below_threshold: true,
            };
        }
        let vote = match mapped {
            Mapped::Class(c) => Vote::class(c, confidence),
            Mapped::Abstain | Mapped::Unmapped => Vote::abstain(confidence),
        };
        Extraction {
            vote,
            answer,
            mapped,
            below_threshold: false,
        }
    }
}

/// Convenience wrapper returning only the vote.
pub fn extract_vote(lf: &PromptedLF, scored: &[(String, f64)]) -> Result<Vote> {
    lf.extract(scored).map(|e| e.vote)
}

/// One entry of a `labelers.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfSpec {
    pub name: String,
    pub template: String,
    pub label_map: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default)]
    pub threshold: f64,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<String>,
    #[serde(default, skip_serializing_if = "is_default_mode")]
    pub mode: ExtractionMode,
}

fn is_default_mode(m: &ExtractionMode) -> bool {
    *m == ExtractionMode::Score
}

impl LfSpec {
    pub fn compile(&self, classes: &ClassSpace) -> Result<PromptedLF> {
        let label_map = LabelMap::from_names(&self.label_map, classes)
            .map_err(|e| Error::Validation(format!("`{}`: {e}", self.name)))?;
        let template = PromptTemplate::parse(&self.template)
            .map_err(|e| Error::Validation(format!("`{}`: {e}", self.name)))?;
        let candidates = match &self.candidates {
            Some(c) => c.clone(),
            None => self.label_map.keys().cloned().collect(),
        };
        let lf = PromptedLF {
            name: self.name.clone(),
            template,
            label_map,
            candidates,
            threshold: self.threshold,
            backend: self.backend.clone(),
            keywords: self.keywords.clone(),
            mode: self.mode,
        };
        lf.validate()?;
        Ok(lf)
    }

    pub fn from_lf(lf: &PromptedLF, classes: &ClassSpace) -> Self {
        let default_candidates: Vec<String> = lf.label_map.keys().map(str::to_string).collect();
        Self {
            name: lf.name.clone(),
            template: lf.template.source().to_string(),
            label_map: lf.label_map.to_names(classes),
            candidates: (lf.candidates != default_candidates).then(|| lf.candidates.clone()),
            threshold: lf.threshold,
            backend: lf.backend.clone(),
            keywords: lf.keywords.clone(),
            mode: lf.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelerSuite {
    pub lfs: Vec<PromptedLF>,
    pub class_space: ClassSpace,
}

impl LabelerSuite {
    pub fn new(lfs: Vec<PromptedLF>, class_space: ClassSpace) -> Result<Self> {
        let suite = Self { lfs, class_space };
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for lf in &self.lfs {
            lf.validate()?;
            if !names.insert(lf.name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate labeling function name `{}`",
                    lf.name
                )));
            }
            if let Some(&c) = lf.polarity().iter().next_back() {
                if c >= self.class_space.k() {
                    return Err(Error::Validation(format!(
                        "`{}` emits class {c} outside the class space",
                        lf.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_specs(specs: &[LfSpec], classes: &ClassSpace) -> Result<Self> {
        let lfs = specs
            .iter()
            .map(|s| s.compile(classes))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lfs, classes.clone())
    }

    pub fn from_json(json: &str, classes: &ClassSpace) -> Result<Self> {
        let specs: Vec<LfSpec> = serde_json::from_str(json)?;
        Self::from_specs(&specs, classes)
    }

    pub fn load(path: impl AsRef<Path>, classes: &ClassSpace) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        Self::from_json(&text, classes).map_err(|e| match e {
            Error::Json(j) => Error::load(path, j),
            other => other,
        })
    }

    pub fn specs(&self) -> Vec<LfSpec> {
        self.lfs
            .iter()
            .map(|lf| LfSpec::from_lf(lf, &self.class_space))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.specs()).expect("specs serialize") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Content hash; changes on any edit.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_json())
    }

    pub fn get(&self, name: &str) -> Option<&PromptedLF> {
        self.lfs.iter().find(|lf| lf.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.lfs.iter().map(|lf| lf.name.clone()).collect()
    }

    /// Every slot any template references must resolve on every example.
    pub fn check_split(&self, split: &Split) -> Result<()> {
        for lf in &self.lfs {
            for slot in lf.template.placeholders() {
                if slot == Placeholder::Keywords && lf.keywords.is_some() {
                    continue;
                }
                if let Some(e) = split
                    .examples
                    .iter()
                    .find(|e| e.field(slot.name()).is_none())
                {
                    return Err(Error::Validation(format!(
                        "example `{}` in split `{}` lacks field {} required by `{}`",
                        e.id, split.name, slot, lf.name
                    )));
                }
            }
        }
        Ok(())
    }
}
