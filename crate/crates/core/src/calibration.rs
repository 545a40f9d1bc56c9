//! Contextual calibration.
//!
//! Each prompted labeling function is queried with content-free inputs in
//! place of the example content. The mean answer distribution over those
//! inputs, `p_cf`, defines a diagonal transform `q ∝ p / p_cf` that is then
//! applied to the function's answer probabilities on real examples.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, ScoreRequest};
use crate::hashing::FieldHasher;
use crate::prompt::PromptedLF;
use crate::{Error, Result};

/// Content-free inputs substituted for example content.
pub const NULL_INPUTS: [&str; 5] = ["N/A", "", "[MASK]", "NULL", "<|endoftext|>"];

/// Lower bound on each component of `p_cf` before renormalizing.
pub const P_CF_FLOOR: f64 = 1e-6;

pub fn default_null_inputs() -> Vec<String> {
    NULL_INPUTS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationWeights {
    pub lf: String,
    pub backend: String,
    pub p_cf: Vec<f64>,
    pub estimated_at: u64,
}

/// Scales `v` to sum to one. Fails on negative entries or zero mass.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Contract(format!("cannot normalize {v:?}")));
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::Contract("cannot normalize a zero vector".into()));
    }
    Ok(v.iter().map(|x| x / total).collect())
}

/// Log-probabilities to a probability vector over the same candidates.
pub fn softmax(logprobs: &[f64]) -> Vec<f64> {
    let max = logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logprobs.iter().map(|lp| (lp - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Arithmetic mean of the per-input distributions, floored and renormalized.
pub fn content_free_mean(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Contract("no content-free distributions".into()))?;
    let k = first.len();
    if vectors.iter().any(|v| v.len() != k) {
        return Err(Error::Contract(
            "content-free distributions differ in arity".into(),
        ));
    }
    let mut mean = vec![0.0; k];
    for v in vectors {
        let v = normalize(v)?;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    let floored: Vec<f64> = mean.iter().map(|m| (m / n).max(P_CF_FLOOR)).collect();
    normalize(&floored)
}

impl CalibrationWeights {
    pub fn uniform(lf: &str, backend: &str, arity: usize) -> Self {
        Self {
            lf: lf.to_string(),
            backend: backend.to_string(),
            p_cf: vec![1.0 / arity as f64; arity],
            estimated_at: 0,
        }
    }

    /// `q_i ∝ raw_i / p_cf_i`, renormalized.
    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.p_cf.len() {
            return Err(Error::Contract(format!(
                "`{}`: {} probabilities for {} calibration weights",
                self.lf,
                raw.len(),
                self.p_cf.len()
            )));
        }
        let scaled: Vec<f64> = raw.iter().zip(&self.p_cf).map(|(r, p)| r / p).collect();
        normalize(&scaled)
    }
}

/// Free-function form of [`CalibrationWeights::apply`].
pub fn apply(weights: &CalibrationWeights, raw: &[f64]) -> Result<Vec<f64>> {
    weights.apply(raw)
}

/// Renders `lf` with `null` in every content slot. Keywords configured on
/// the labeling function are kept.
pub fn render_null(lf: &PromptedLF, null: &str) -> Result<String> {
    lf.render_with(|_| Some(null))
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Queries every null input and averages. Any backend failure fails the
/// whole estimate; there is no partial averaging.
pub fn estimate(
    lf: &PromptedLF,
    gateway: &Gateway,
    nulls: &[String],
) -> Result<CalibrationWeights> {
    if nulls.is_empty() {
        return Err(Error::Config("no null inputs configured".into()));
    }
    let mut dists = Vec::with_capacity(nulls.len());
    for null in nulls {
        let prompt = render_null(lf, null)?;
        let resp = gateway
            .score(&ScoreRequest::new(&lf.backend, prompt, &lf.candidates))
            .map_err(|e| Error::Calibration {
                lf: lf.name.clone(),
                reason: format!("null input {null:?}: {e}"),
            })?;
        dists.push(softmax(&resp.logprobs));
    }
    Ok(CalibrationWeights {
        lf: lf.name.clone(),
        backend: lf.backend.clone(),
        p_cf: content_free_mean(&dists)?,
        estimated_at: now(),
    })
}

/// Weights for a whole suite, keyed by labeling-function name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationSet {
    pub weights: BTreeMap<String, CalibrationWeights>,
}

impl CalibrationSet {
    pub fn get(&self, lf: &str) -> Option<&CalibrationWeights> {
        self.weights.get(lf)
    }

    pub fn insert(&mut self, w: CalibrationWeights) {
        self.weights.insert(w.lf.clone(), w);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let list: Vec<&CalibrationWeights> = self.weights.values().collect();
        fs::write(path, serde_json::to_string_pretty(&list)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let list: Vec<CalibrationWeights> =
            serde_json::from_slice(&fs::read(path).map_err(|e| Error::load(path, e))?)?;
        let mut set = Self::default();
        for w in list {
            set.insert(w);
        }
        Ok(set)
    }
}

/// Estimates keyed by a content hash of everything that determines them,
/// persisted beside the response cache. Editing a template or candidate set
/// changes the key and forces re-estimation.
pub struct CalibrationStore {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct StoreLine {
    key: String,
    p_cf: Vec<f64>,
}

impl CalibrationStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join("calibration.jsonl");
        let mut entries = BTreeMap::new();
        if path.exists() {
            for line in fs::read_to_string(&path)?.lines() {
                if let Ok(l) = serde_json::from_str::<StoreLine>(line) {
                    entries.insert(l.key, l.p_cf);
                }
            }
        }
        Ok(Self {
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    /// A store beside the gateway's on-disk cache, or in memory.
    pub fn for_gateway(gateway: &Gateway) -> Result<Self> {
        match gateway.cache().dir() {
            Some(dir) => Self::open(dir),
            None => Ok(Self::in_memory()),
        }
    }

    pub fn key(lf: &PromptedLF, nulls: &[String]) -> String {
        let mut h = FieldHasher::new();
        h.field(&lf.backend)
            .field(lf.template.source())
            .field(lf.keywords.as_deref().unwrap_or("\u{0}"));
        for c in &lf.candidates {
            h.field(c);
        }
        h.field("|");
        for n in nulls {
            h.field(n);
        }
        h.hex()
    }

    pub fn estimate(
        &self,
        lf: &PromptedLF,
        gateway: &Gateway,
        nulls: &[String],
    ) -> Result<CalibrationWeights> {
        let key = Self::key(lf, nulls);
        if let Some(p_cf) = self.entries.lock().unwrap().get(&key) {
            return Ok(CalibrationWeights {
                lf: lf.name.clone(),
                backend: lf.backend.clone(),
                p_cf: p_cf.clone(),
                estimated_at: now(),
            });
        }
        let w = estimate(lf, gateway, nulls)?;
        let mut entries = self.entries.lock().unwrap();
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&StoreLine {
                key: key.clone(),
                p_cf: w.p_cf.clone(),
            })?;
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{line}")?;
        }
        entries.insert(key, w.p_cf.clone());
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, BackendError, MockBackend, Rulebook};
    use crate::prompt::{LabelMap, MapTarget, PromptTemplate};
    use std::sync::Arc;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn mean_of_constant_vectors() {
        let v = vec![vec![0.8, 0.2]; 5];
        assert!(close(&content_free_mean(&v).unwrap(), &[0.8, 0.2], 1e-12));
    }

    #[test]
    fn mean_of_mixed_vectors() {
        // (0.9 + 0.7 + 3 * 0.8) / 5 = 0.8
        let v = vec![
            vec![0.9, 0.1],
            vec![0.7, 0.3],
            vec![0.8, 0.2],
            vec![0.8, 0.2],
            vec![0.8, 0.2],
        ];
        assert!(close(&content_free_mean(&v).unwrap(), &[0.8, 0.2], 1e-12));
    }

    #[test]
    fn zero_mass_is_floored() {
        let p = content_free_mean(&[vec![1.0, 0.0]]).unwrap();
        assert!(p.iter().all(|&x| x > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn apply_flips_a_tie() {
        let w = CalibrationWeights {
            lf: "a".into(),
            backend: "b".into(),
            p_cf: vec![0.8, 0.2],
            estimated_at: 0,
        };
        // 0.5 / 0.8 = 0.625, 0.5 / 0.2 = 2.5, normalized by 3.125
        let q = w.apply(&[0.5, 0.5]).unwrap();
        assert!(close(&q, &[0.2, 0.8], 1e-12));
        assert!(w.apply(&[0.5]).is_err());
    }

    #[test]
    fn uniform_weights_are_identity_and_one_hot_is_preserved() {
        let w = CalibrationWeights::uniform("a", "b", 3);
        let q = w.apply(&[2.0, 1.0, 1.0]).unwrap();
        assert!(close(&q, &[0.5, 0.25, 0.25], 1e-12));
        let w = CalibrationWeights {
            p_cf: vec![0.3, 0.7],
            ..CalibrationWeights::uniform("a", "b", 2)
        };
        assert_eq!(w.apply(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    fn lf() -> PromptedLF {
        PromptedLF::new(
            "url",
            PromptTemplate::parse("Does the following comment have a URL?\\n\\n[TEXT]").unwrap(),
            LabelMap::new([("yes", MapTarget::Class(1)), ("no", MapTarget::Abstain)]).unwrap(),
            "mock",
        )
    }

    #[test]
    fn estimate_uses_every_null_input() {
        let book = Rulebook::from_json(
            r#"[{"match":{"regex":"\n\nN/A$"},"dist":{"yes":0.9,"no":0.1}},
                {"match":{"regex":"\n\n$"},"dist":{"yes":0.7,"no":0.3}},
                {"default":{"yes":0.8,"no":0.2}}]"#,
        )
        .unwrap();
        let gw = Gateway::ephemeral().with_backend("mock", Arc::new(MockBackend::new(book)));
        let w = estimate(&lf(), &gw, &default_null_inputs()).unwrap();
        assert!(close(&w.p_cf, &[0.8, 0.2], 1e-12), "{:?}", w.p_cf);
        assert_eq!(gw.flush_stats()["mock"].queries, 5);
    }

    struct FailsOn(&'static str);
    impl Backend for FailsOn {
        fn score(&self, prompt: &str, c: &[String]) -> std::result::Result<Vec<f64>, BackendError> {
            if prompt.ends_with(self.0) {
                Err(BackendError::Permanent("boom".into()))
            } else {
                Ok(vec![-0.5; c.len()])
            }
        }
    }

    #[test]
    fn any_failed_null_input_fails_estimation() {
        let gw = Gateway::ephemeral().with_backend("mock", Arc::new(FailsOn("NULL")));
        let err = estimate(&lf(), &gw, &default_null_inputs()).unwrap_err();
        assert!(matches!(err, Error::Calibration { .. }));
    }

    #[test]
    fn store_reuses_estimates_until_the_template_changes() {
        let book = Rulebook::from_json(r#"[{"default":{"yes":0.6,"no":0.4}}]"#).unwrap();
        let gw = Gateway::ephemeral().with_backend("mock", Arc::new(MockBackend::new(book)));
        let dir = tempfile::tempdir().unwrap();
        let nulls = default_null_inputs();
        let first = CalibrationStore::open(dir.path())
            .unwrap()
            .estimate(&lf(), &gw, &nulls)
            .unwrap();
        let store = CalibrationStore::open(dir.path()).unwrap();
        let again = store.estimate(&lf(), &gw, &nulls).unwrap();
        assert_eq!(first.p_cf, again.p_cf);
        assert_eq!(gw.flush_stats()["mock"].queries, 5);
        let mut edited = lf();
        edited.template = PromptTemplate::parse("Is there a link? [TEXT]").unwrap();
        store.estimate(&edited, &gw, &nulls).unwrap();
        assert_eq!(gw.flush_stats()["mock"].queries, 10);
    }

    #[test]
    fn weights_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = CalibrationSet::default();
        set.insert(CalibrationWeights {
            lf: "a".into(),
            backend: "mock".into(),
            p_cf: vec![0.3, 0.7],
            estimated_at: 12,
        });
        let path = dir.path().join("calibration.json");
        set.save(&path).unwrap();
        assert_eq!(CalibrationSet::load(&path).unwrap(), set);
    }
}
