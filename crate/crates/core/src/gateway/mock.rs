//! Deterministic rule-based backend for tests and fixtures.
//!
//! A rulebook is a JSON list. Rule entries are tried in order against the
//! rendered prompt and the first match supplies the answer distribution:
//!
//! ```json
//! [
//!   {"match": {"substring": "http"}, "dist": {"yes": 0.95, "no": 0.05}},
//!   {"match": {"regex": "(?s)subscribe.*channel"}, "dist": {"yes": 0.8, "no": 0.2}},
//!   {"default": {"yes": 0.5, "no": 0.5}},
//!   {"noise": {"seed": 7, "scale": 0.2}}
//! ]
//! ```
//!
//! With a `noise` entry, Gaussian noise is added to every log-probability
//! from an RNG seeded by `(seed, prompt, candidates)`, so repeated requests
//! see identical perturbations.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, ScoreRequest};
use crate::hashing::FieldHasher;
use crate::prompt::normalize_answer;
use crate::{Error, Result};

/// Probabilities are floored here before taking logs so responses stay finite.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchRule {
    Substring(String),
    Regex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub seed: u64,
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Entry {
    Rule {
        #[serde(rename = "match")]
        matcher: MatchRule,
        dist: IndexMap<String, f64>,
    },
    Default {
        default: IndexMap<String, f64>,
    },
    Noise {
        noise: Noise,
    },
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub matcher: MatchRule,
    regex: Option<Regex>,
    pub dist: IndexMap<String, f64>,
}

impl Rule {
    pub fn new(matcher: MatchRule, dist: IndexMap<String, f64>) -> Result<Self> {
        let regex = match &matcher {
            MatchRule::Regex(r) => Some(
                Regex::new(r).map_err(|e| Error::Config(format!("bad rule regex {r:?}: {e}")))?,
            ),
            MatchRule::Substring(_) => None,
        };
        check_dist(&dist)?;
        Ok(Self {
            matcher,
            regex,
            dist,
        })
    }

    fn matches(&self, prompt: &str) -> bool {
        match (&self.matcher, &self.regex) {
            (_, Some(re)) => re.is_match(prompt),
            (MatchRule::Substring(s), None) => prompt.contains(s.as_str()),
            (MatchRule::Regex(_), None) => unreachable!("regex compiled in Rule::new"),
        }
    }
}

fn check_dist(dist: &IndexMap<String, f64>) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::Config("empty answer distribution".into()));
    }
    if dist.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Config(format!("invalid probabilities in {dist:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Rulebook {
    pub rules: Vec<Rule>,
    pub default: IndexMap<String, f64>,
    pub noise: Option<Noise>,
}

impl Rulebook {
    pub fn new(rules: Vec<Rule>, default: IndexMap<String, f64>) -> Result<Self> {
        check_dist(&default)?;
        Ok(Self {
            rules,
            default,
            noise: None,
        })
    }

    pub fn with_noise(mut self, seed: u64, scale: f64) -> Self {
        self.noise = Some(Noise { seed, scale });
        self
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let entries: Vec<Entry> =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("rulebook: {e}")))?;
        let mut rules = Vec::new();
        let mut default = None;
        let mut noise = None;
        for entry in entries {
            match entry {
                Entry::Rule { matcher, dist } => rules.push(Rule::new(matcher, dist)?),
                Entry::Default { default: d } => {
                    if default.replace(d).is_some() {
                        return Err(Error::Config("rulebook has two defaults".into()));
                    }
                }
                Entry::Noise { noise: n } => noise = Some(n),
            }
        }
        let default = default.ok_or_else(|| Error::Config("rulebook lacks a default".into()))?;
        let mut book = Self::new(rules, default)?;
        book.noise = noise;
        Ok(book)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::load(path, e))?)
    }

    pub fn to_json(&self) -> String {
        let mut entries: Vec<Entry> = self
            .rules
            .iter()
            .map(|r| Entry::Rule {
                matcher: r.matcher.clone(),
                dist: r.dist.clone(),
            })
            .collect();
        entries.push(Entry::Default {
            default: self.default.clone(),
        });
        if let Some(noise) = self.noise {
            entries.push(Entry::Noise { noise });
        }
        serde_json::to_string_pretty(&entries).expect("rulebook serializes") + "\n"
    }

    fn dist_for(&self, prompt: &str) -> &IndexMap<String, f64> {
        self.rules
            .iter()
            .find(|r| r.matches(prompt))
            .map_or(&self.default, |r| &r.dist)
    }

    /// Log-probabilities for `candidates` under the first matching rule.
    pub fn score(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>> {
        let dist = self.dist_for(prompt);
        if dist.len() != candidates.len() {
            return Err(Error::Config(format!(
                "rule distribution has {} answers, request has {} candidates",
                dist.len(),
                candidates.len()
            )));
        }
        let mut out = Vec::with_capacity(candidates.len());
        for c in candidates {
            let key = normalize_answer(c);
            let p = dist
                .iter()
                .find(|(k, _)| normalize_answer(k) == key)
                .map(|(_, p)| *p)
                .ok_or_else(|| Error::Config(format!("rule distribution lacks candidate {c:?}")))?;
            out.push(p.max(PROB_FLOOR).ln());
        }
        if let Some(noise) = self.noise {
            let mut h = FieldHasher::new();
            h.field(noise.seed.to_le_bytes()).field(prompt);
            for c in candidates {
                h.field(c);
            }
            let seed: [u8; 32] = hex::decode(h.hex())
                .expect("hex digest")
                .try_into()
                .expect("32-byte digest");
            let mut rng = ChaCha8Rng::from_seed(seed);
            let normal = Normal::new(0.0, noise.scale.abs())
                .map_err(|e| Error::Config(format!("noise scale: {e}")))?;
            for lp in &mut out {
                *lp += normal.sample(&mut rng);
            }
        }
        Ok(out)
    }

    /// The matching distribution as completions, most probable first.
    pub fn complete(&self, prompt: &str, top_k: usize) -> Vec<Completion> {
        let mut comps: Vec<Completion> = self
            .dist_for(prompt)
            .iter()
            .map(|(text, p)| Completion {
                text: text.clone(),
                logprob: p.max(PROB_FLOOR).ln(),
            })
            .collect();
        comps.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        comps.truncate(top_k);
        comps
    }
}

/// Free-function form of [`Rulebook::score`].
pub fn mock_score(rulebook: &Rulebook, req: &ScoreRequest) -> Result<Vec<f64>> {
    rulebook.score(&req.prompt, &req.candidates)
}

pub struct MockBackend {
    rulebook: Rulebook,
}

impl MockBackend {
    pub fn new(rulebook: Rulebook) -> Self {
        Self { rulebook }
    }

    pub fn rulebook(&self) -> &Rulebook {
        &self.rulebook
    }
}

impl Backend for MockBackend {
    fn score(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, BackendError> {
        self.rulebook
            .score(prompt, candidates)
            .map_err(|e| BackendError::Permanent(e.to_string()))
    }

    fn complete(&self, prompt: &str, top_k: usize) -> Result<Vec<Completion>, BackendError> {
        Ok(self.rulebook.complete(prompt, top_k))
    }
}
