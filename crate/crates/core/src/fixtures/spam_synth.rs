//! Synthetic spam fixture with planted labeling-function behavior.
//!
//! Comments are bags of class-leaning words, neutral filler, and marker
//! tokens. Each prompted labeler has one marker (two-sided labelers have
//! one per class); the mock rulebook answers `yes` exactly when the marker
//! appears after that labeler's question. Marker rates are solved so each
//! labeler attains its designed coverage and accuracy in expectation.
//!
//! A dark slice carries no markers, so every prompted labeler abstains
//! there and only the end model can label it from the class words.
//!
//! The zero-shot labeler answers from a `wow` token that agrees with the
//! class with probability [`ZERO_SHOT_ACCURACY`]. A content-free rule makes
//! calibration measurable without changing any decision.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{yes_map, Family, YOUTUBE, ZERO_SHOT, ZERO_SHOT_NAME};
use crate::data::write_dataset;
use crate::data::{ClassSpace, Dataset, Example, Split};
use crate::gateway::{MatchRule, Rule, Rulebook};
use crate::prompt::{LabelerSuite, LfSpec};
use crate::synthetic::sample_class;
use crate::Result;

pub const HAM: usize = 0;
pub const SPAM: usize = 1;
pub const PRIOR: [f64; 2] = [0.512, 0.488];
pub const SEED: u64 = 2022;
pub const SPLIT_SIZES: [(&str, usize); 3] = [("train", 1500), ("valid", 120), ("test", 500)];

/// Fraction of examples with no markers.
pub const DARK_FRACTION: f64 = 0.08;
pub const CLASS_WORDS: usize = 4;
pub const NEUTRAL_WORDS: usize = 4;
/// Probability that a class word comes from the example's own class.
pub const CLASS_WORD_FIDELITY: f64 = 0.65;

pub const ZERO_SHOT_ACCURACY: f64 = 0.72;
pub const ZERO_SHOT_MARKER: &str = "wow";
/// Threshold on two-sided labelers; their unmarked answer is a coin flip.
pub const TWO_SIDED_THRESHOLD: f64 = 0.6;

pub const SPAM_WORDS: [&str; 12] = [
    "free",
    "offer",
    "click",
    "win",
    "visit",
    "deal",
    "cash",
    "bonus",
    "prize",
    "promo",
    "followers",
    "money",
];
pub const HAM_WORDS: [&str; 12] = [
    "love",
    "beautiful",
    "voice",
    "memories",
    "lyrics",
    "music",
    "classic",
    "feel",
    "great",
    "best",
    "remember",
    "dance",
];
pub const NEUTRAL: [&str; 20] = [
    "the", "this", "video", "today", "really", "just", "one", "time", "people", "know", "still",
    "here", "from", "with", "all", "every", "year", "watch", "now", "who",
];

/// Content-free answer distribution; skewed, but never enough to flip.
pub const NULL_DIST: (f64, f64) = (0.45, 0.55);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marker {
    /// Votes `class` when the marker is present.
    Single { class: usize, marker: &'static str },
    /// Votes `yes_class` on `yes`, the other class on `no`.
    TwoSided {
        yes_class: usize,
        yes: &'static str,
        no: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedLf {
    pub name: &'static str,
    pub coverage: f64,
    pub accuracy: f64,
    pub marker: Marker,
}

pub const PLANTED: [PlantedLf; 10] = [
    PlantedLf {
        name: "channel_or_video",
        coverage: 0.3,
        accuracy: 0.85,
        marker: Marker::Single {
            class: SPAM,
            marker: "channel",
        },
    },
    PlantedLf {
        name: "subscribe",
        coverage: 0.35,
        accuracy: 0.9,
        marker: Marker::Single {
            class: SPAM,
            marker: "subscribe",
        },
    },
    PlantedLf {
        name: "has_url",
        coverage: 0.9,
        accuracy: 0.75,
        marker: Marker::TwoSided {
            yes_class: SPAM,
            yes: "http",
            no: "offline",
        },
    },
    PlantedLf {
        name: "do_something",
        coverage: 0.4,
        accuracy: 0.7,
        marker: Marker::Single {
            class: SPAM,
            marker: "please",
        },
    },
    PlantedLf {
        name: "song",
        coverage: 0.35,
        accuracy: 0.8,
        marker: Marker::Single {
            class: HAM,
            marker: "song",
        },
    },
    PlantedLf {
        name: "check_out",
        coverage: 0.3,
        accuracy: 0.8,
        marker: Marker::Single {
            class: SPAM,
            marker: "check out",
        },
    },
    PlantedLf {
        name: "fewer_than_5_words",
        coverage: 0.3,
        accuracy: 0.65,
        marker: Marker::Single {
            class: HAM,
            marker: "lol",
        },
    },
    PlantedLf {
        name: "person_name",
        coverage: 0.3,
        accuracy: 0.7,
        marker: Marker::Single {
            class: HAM,
            marker: "ann",
        },
    },
    PlantedLf {
        name: "strong_sentiment",
        coverage: 0.4,
        accuracy: 0.75,
        marker: Marker::Single {
            class: HAM,
            marker: "amazing",
        },
    },
    PlantedLf {
        name: "subjective_opinion",
        coverage: 0.6,
        accuracy: 0.7,
        marker: Marker::TwoSided {
            yes_class: HAM,
            yes: "think",
            no: "fact",
        },
    },
];

impl PlantedLf {
    /// Per-class marker rates on the marked (non-dark) population that give
    /// the designed coverage and accuracy over the whole population.
    pub fn single_rates(&self, class: usize) -> (f64, f64) {
        let lit = 1.0 - DARK_FRACTION;
        let pi = PRIOR[class];
        (
            self.accuracy * self.coverage / (pi * lit),
            (1.0 - self.accuracy) * self.coverage / ((1.0 - pi) * lit),
        )
    }
}

pub fn class_space() -> ClassSpace {
    ClassSpace::binary("HAM", "SPAM")
}

/// Token units for one comment; `check out` stays one unit.
fn comment(rng: &mut ChaCha8Rng, y: usize, dark: bool) -> String {
    let own = if y == SPAM { &SPAM_WORDS } else { &HAM_WORDS };
    let other = if y == SPAM { &HAM_WORDS } else { &SPAM_WORDS };
    let mut units: Vec<&str> = Vec::new();
    for _ in 0..CLASS_WORDS {
        let pool = if rng.random::<f64>() < CLASS_WORD_FIDELITY {
            own
        } else {
            other
        };
        units.push(pool[rng.random_range(0..pool.len())]);
    }
    for _ in 0..NEUTRAL_WORDS {
        units.push(NEUTRAL[rng.random_range(0..NEUTRAL.len())]);
    }
    for lf in &PLANTED {
        // Draw unconditionally so the dark slice does not shift the stream.
        let u = rng.random::<f64>();
        let v = rng.random::<f64>();
        if dark {
            continue;
        }
        match lf.marker {
            Marker::Single { class, marker } => {
                let (hit, miss) = lf.single_rates(class);
                let rate = if y == class { hit } else { miss };
                if u < rate {
                    units.push(marker);
                }
            }
            Marker::TwoSided { yes_class, yes, no } => {
                if u < lf.coverage / (1.0 - DARK_FRACTION) {
                    let label = if v < lf.accuracy { y } else { 1 - y };
                    units.push(if label == yes_class { yes } else { no });
                }
            }
        }
    }
    let wow_rate = if y == SPAM {
        ZERO_SHOT_ACCURACY
    } else {
        1.0 - ZERO_SHOT_ACCURACY
    };
    if rng.random::<f64>() < wow_rate {
        units.push(ZERO_SHOT_MARKER);
    }
    units.shuffle(rng);
    units.join(" ")
}

/// Dataset plus per-example dark flags, in split order.
pub struct Generated {
    pub dataset: Dataset,
    pub dark: IndexMap<String, bool>,
}

pub fn generate_dataset() -> Result<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut splits = Vec::new();
    let mut dark_flags = IndexMap::new();
    for (name, size) in SPLIT_SIZES {
        let mut examples = Vec::with_capacity(size);
        for i in 0..size {
            let y = sample_class(&mut rng, &PRIOR);
            let dark = rng.random::<f64>() < DARK_FRACTION;
            let id = format!("{name}-{i:04}");
            examples.push(Example::new(
                id.clone(),
                comment(&mut rng, y, dark),
                Some(y),
            ));
            dark_flags.insert(id, dark);
        }
        splits.push(Split::new(name, examples));
    }
    Ok(Generated {
        dataset: Dataset::new(class_space(), splits, PRIOR.to_vec())?,
        dark: dark_flags,
    })
}

/// Whether an example text is from the dark slice, judged from its tokens.
pub fn is_dark(text: &str) -> bool {
    let toks: Vec<&str> = text.split(' ').collect();
    !PLANTED.iter().any(|lf| match lf.marker {
        Marker::Single { marker, .. } => contains_unit(text, &toks, marker),
        Marker::TwoSided { yes, no, .. } => {
            contains_unit(text, &toks, yes) || contains_unit(text, &toks, no)
        }
    })
}

fn contains_unit(text: &str, toks: &[&str], unit: &str) -> bool {
    if unit.contains(' ') {
        text.contains(unit)
    } else {
        toks.contains(&unit)
    }
}

fn template_of(name: &str) -> &'static str {
    YOUTUBE
        .iter()
        .find(|r| r.0 == name)
        .map(|r| r.1)
        .expect("planted labelers reuse prompted templates")
}

pub fn pws_specs() -> Vec<LfSpec> {
    let classes = class_space();
    PLANTED
        .iter()
        .map(|lf| {
            let (label_map, threshold) = match lf.marker {
                Marker::Single { class, .. } => (yes_map(classes.name(class)), 0.0),
                Marker::TwoSided { yes_class, .. } => (
                    IndexMap::from([
                        ("yes".to_string(), classes.name(yes_class).to_string()),
                        ("no".to_string(), classes.name(1 - yes_class).to_string()),
                    ]),
                    TWO_SIDED_THRESHOLD,
                ),
            };
            LfSpec {
                name: lf.name.to_string(),
                template: template_of(lf.name).to_string(),
                label_map,
                candidates: None,
                threshold,
                backend: Family::T0pp.backend().to_string(),
                keywords: None,
                mode: Default::default(),
            }
        })
        .collect()
}

pub fn zs_specs() -> Vec<LfSpec> {
    vec![LfSpec {
        name: ZERO_SHOT_NAME.to_string(),
        template: ZERO_SHOT[0].1.to_string(),
        label_map: IndexMap::from([
            ("no".to_string(), "HAM".to_string()),
            ("yes".to_string(), "SPAM".to_string()),
        ]),
        candidates: None,
        threshold: 0.0,
        backend: Family::T0pp.backend().to_string(),
        keywords: None,
        mode: Default::default(),
    }]
}

pub fn pws_suite() -> Result<LabelerSuite> {
    LabelerSuite::from_specs(&pws_specs(), &class_space())
}

pub fn zs_suite() -> Result<LabelerSuite> {
    LabelerSuite::from_specs(&zs_specs(), &class_space())
}

fn yes_no(yes: f64) -> IndexMap<String, f64> {
    IndexMap::from([("yes".to_string(), yes), ("no".to_string(), 1.0 - yes)])
}

/// Question text preceding the `[TEXT]` slot, escaped for a regex.
fn question_regex(template: &str) -> String {
    let expanded = template.replace("\\n", "\n");
    let question = expanded.split("[TEXT]").next().unwrap_or_default();
    regex::escape(question)
}

fn marker_rule(question: &str, marker: &str, yes: f64) -> Result<Rule> {
    Rule::new(
        MatchRule::Regex(format!("(?s)^{question}.*\\b{}\\b", regex::escape(marker))),
        yes_no(yes),
    )
}

fn question_rule(question: &str, yes: f64) -> Result<Rule> {
    Rule::new(MatchRule::Regex(format!("(?s)^{question}")), yes_no(yes))
}

pub fn rulebook() -> Result<Rulebook> {
    let mut rules = vec![Rule::new(
        MatchRule::Regex("(?s)\\n\\n\"?(N/A|\\[MASK\\]|NULL|<\\|endoftext\\|>)?\"?\\z".to_string()),
        yes_no(NULL_DIST.0),
    )?];
    for lf in &PLANTED {
        let q = question_regex(template_of(lf.name));
        match lf.marker {
            Marker::Single { marker, .. } => {
                rules.push(marker_rule(&q, marker, 0.9)?);
                rules.push(question_rule(&q, 0.2)?);
            }
            Marker::TwoSided { yes, no, .. } => {
                rules.push(marker_rule(&q, yes, 0.9)?);
                rules.push(marker_rule(&q, no, 0.1)?);
                rules.push(question_rule(&q, 0.5)?);
            }
        }
    }
    let q = question_regex(ZERO_SHOT[0].1);
    rules.push(marker_rule(&q, ZERO_SHOT_MARKER, 0.8)?);
    rules.push(question_rule(&q, 0.3)?);
    Rulebook::new(rules, yes_no(0.5))
}

const DIM: usize = 1 << 14;

/// Run config for one pipeline over this fixture.
pub fn run_config(labelers: &str, label_model: &str) -> String {
    format!(
        r#"dataset = "."
labelers = "{labelers}"
calibrate = true
label_split = "train"
eval_split = "test"
seeds = [0, 1, 2, 3, 4, 5]
output = "runs"

[backends.t0pp]
kind = "mock"
rulebook = "rulebook.json"

[label]
label_model = "{label_model}"

[train]
dim = {DIM}
"#
    )
}

pub const PWS_CONFIG: &str = "pws.toml";
pub const ZS_CONFIG: &str = "zs.toml";

/// Writes the dataset, both suites, the rulebook, and both run configs.
pub fn write(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    write_dataset(&generate_dataset()?.dataset, dir)?;
    pws_suite()?.save(dir.join("pws.labelers.json"))?;
    zs_suite()?.save(dir.join("zs.labelers.json"))?;
    fs::write(dir.join("rulebook.json"), rulebook()?.to_json())?;
    fs::write(
        dir.join(PWS_CONFIG),
        run_config("pws.labelers.json", "triplet"),
    )?;
    fs::write(dir.join(ZS_CONFIG), run_config("zs.labelers.json", "mv"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vote;
    use crate::prompt::PromptedLF;

    fn vote(lf: &PromptedLF, book: &Rulebook, text: &str) -> Vote {
        let prompt = lf.render(&Example::new("e", text, None)).unwrap();
        let lp = book.score(&prompt, &lf.candidates).unwrap();
        let scored: Vec<(String, f64)> = lf
            .candidates
            .iter()
            .cloned()
            .zip(lp.into_iter().map(f64::exp))
            .collect();
        lf.extract(&scored).unwrap().vote
    }

    #[test]
    fn marker_rates_are_probabilities() {
        for lf in &PLANTED {
            if let Marker::Single { class, .. } = lf.marker {
                let (hit, miss) = lf.single_rates(class);
                assert!(hit < 1.0 && miss < hit, "{}", lf.name);
            }
        }
    }

    #[test]
    fn labelers_fire_only_on_their_marker() {
        let book = rulebook().unwrap();
        let suite = pws_suite().unwrap();
        let text = "the channel song free";
        let fired: Vec<_> = suite
            .lfs
            .iter()
            .filter(|lf| !vote(lf, &book, text).is_abstain())
            .map(|lf| lf.name.as_str())
            .collect();
        assert_eq!(fired, ["channel_or_video", "song"]);
        let url = suite.get("has_url").unwrap();
        assert_eq!(vote(url, &book, "offline now").label, Some(HAM));
        assert_eq!(vote(url, &book, "http now").label, Some(SPAM));
        let subj = suite.get("subjective_opinion").unwrap();
        assert_eq!(vote(subj, &book, "fact now").label, Some(SPAM));
        assert!(vote(subj, &book, "nothing").is_abstain());
    }

    #[test]
    fn zero_shot_follows_wow() {
        let book = rulebook().unwrap();
        let lf = &zs_suite().unwrap().lfs[0];
        assert_eq!(vote(lf, &book, "wow the").label, Some(SPAM));
        assert_eq!(vote(lf, &book, "the").label, Some(HAM));
    }

    #[test]
    fn null_prompts_hit_content_free_rule() {
        let book = rulebook().unwrap();
        for lf in pws_suite()
            .unwrap()
            .lfs
            .iter()
            .chain(&zs_suite().unwrap().lfs)
        {
            for null in crate::calibration::NULL_INPUTS {
                let prompt = lf.render_with(|_| Some(null)).unwrap();
                let yes_no = ["yes".to_string(), "no".to_string()];
                let p = book.score(&prompt, &yes_no).unwrap();
                assert!(
                    (p[0].exp() - NULL_DIST.0).abs() < 1e-12,
                    "{} {null:?}",
                    lf.name
                );
            }
        }
    }

    #[test]
    fn dark_examples_carry_no_markers() {
        let g = generate_dataset().unwrap();
        let mut n_dark = 0;
        for split in g.dataset.splits.values() {
            for e in &split.examples {
                assert!(!g.dark[&e.id] || is_dark(e.text()), "{}", e.id);
                n_dark += usize::from(g.dark[&e.id]);
            }
        }
        let frac = n_dark as f64 / g.dark.len() as f64;
        assert!((frac - DARK_FRACTION).abs() < 0.02, "{frac}");
    }
}
