//! Shipped labeler suites and the synthetic spam fixture.
//!
//! Prompt tables are transcribed verbatim, including their `\n` escapes and
//! stray spaces. Single-polarity labelers map `yes` to their class and `no`
//! to abstention; zero-shot labelers map both answers to classes.

use indexmap::IndexMap;

use crate::data::ClassSpace;
use crate::prompt::{LabelerSuite, LfSpec};
use crate::Result;

pub mod spam_synth;

pub const T0PP_BACKEND: &str = "t0pp";
pub const GPT3_BACKEND: &str = "gpt3";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    T0pp,
    Gpt3,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::T0pp, Family::Gpt3];

    pub fn backend(self) -> &'static str {
        match self {
            Family::T0pp => T0PP_BACKEND,
            Family::Gpt3 => GPT3_BACKEND,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Benchmark {
    Youtube,
    Sms,
    Spouse,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::Youtube, Benchmark::Sms, Benchmark::Spouse];

    pub fn slug(self) -> &'static str {
        match self {
            Benchmark::Youtube => "youtube",
            Benchmark::Sms => "sms",
            Benchmark::Spouse => "spouse",
        }
    }

    pub fn classes(self) -> ClassSpace {
        match self {
            Benchmark::Youtube | Benchmark::Sms => ClassSpace::binary("HAM", "SPAM"),
            Benchmark::Spouse => ClassSpace::binary("NOT_SPOUSE", "SPOUSE"),
        }
    }
}

/// One prompted labeler row: name, T0++ template, GPT-3 template, class.
pub type PromptRow = (&'static str, &'static str, &'static str, &'static str);

pub const YOUTUBE: [PromptRow; 10] = [
    (
        "channel_or_video",
        "Does the following comment reference the speaker's channel or video?\\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" reference the speaker's channel or video?\\nA:",
        "SPAM",
    ),
    (
        "subscribe",
        "Does the following comment ask you to subscribe to a channel?\\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" ask you to subscribe to a channel?\\nA:",
        "SPAM",
    ),
    (
        "has_url",
        "Does the following comment have a URL?\\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" have a URL?\\nA:",
        "SPAM",
    ),
    (
        "do_something",
        "Does the following comment ask the reader to do something?\\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" ask the reader to do something?\\nA:",
        "SPAM",
    ),
    (
        "song",
        "Does the following comment talk about a song?\\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" talk about a song?\\nA:",
        "HAM",
    ),
    (
        "check_out",
        "Does the following comment contain the words \"check out\"? \\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" contain the words \"check out\"?\\nA:",
        "SPAM",
    ),
    (
        "fewer_than_5_words",
        "Is the following comment fewer than 5 words?\\n\\n[TEXT]",
        "Q: Is the following comment \"[TEXT]\" fewer than 5 words?\\nA:",
        "HAM",
    ),
    (
        "person_name",
        "Does the following comment mention a person's name?\\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" mention a person's name?\\nA:",
        "HAM",
    ),
    (
        "strong_sentiment",
        "Does the following comment express a very strong sentiment?\\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" express a very strong sentiment?\\nA:",
        "HAM",
    ),
    (
        "subjective_opinion",
        "Does the following comment express a subjective opinion?\\n\\n[TEXT]",
        "Q: Does the following comment \"[TEXT]\" express a subjective opinion?\\nA:",
        "HAM",
    ),
];

pub const SPOUSE: [PromptRow; 11] = [
    (
        "spouse_between",
        "Context: [TEXT]\\n\\nIs there any mention of \"spouse\" between the entities [PERSON1] and [PERSON2]?",
        "Context: \"[TEXT]\"\\nQ: Is there any mention of \"spouse\" between the entities [PERSON1] and [PERSON2]?\\nA:",
        "SPOUSE",
    ),
    (
        "spouse_before_person1",
        "Context: [TEXT]\\n\\nIs there any mention of \"spouse\" before the entity [PERSON1]?",
        "Context: \"[TEXT]\"\\nQ: Is there any mention of \"spouse\" before the entity [PERSON1]?\\nA:",
        "SPOUSE",
    ),
    (
        "spouse_before_person2",
        "Context: [TEXT]\\n\\nIs there any mention of \"spouse\" before the entity [PERSON2]?",
        "Context: \"[TEXT]\"\\nQ: Is there any mention of \"spouse\" before the entity [PERSON2]?\\nA:",
        "SPOUSE",
    ),
    (
        "same_last_name",
        "Context: [TEXT]\\n\\nDo [PERSON1] and [PERSON2] have the same last name?",
        "Context: \"[TEXT]\"\\nQ: Do [PERSON1] and [PERSON2] have the same last name?\\nA:",
        "SPOUSE",
    ),
    (
        "got_married",
        "Context: [TEXT]\\n\\nDid [PERSON1] and [PERSON2] get married?",
        "Context: \"[TEXT]\"\\nQ: Did [PERSON1] and [PERSON2] get married?\\nA:",
        "SPOUSE",
    ),
    (
        "family_members",
        "Context: [TEXT]\\n\\nAre [PERSON1] and [PERSON2] family members?",
        "Context: \"[TEXT]\"\\nQ: Are [PERSON1] and [PERSON2] family members?\\nA:",
        "NOT_SPOUSE",
    ),
    (
        "person1_family",
        "Context: [TEXT]\\n\\nIs [PERSON1] said to be a family member?",
        "Context: \"[TEXT]\"\\nQ: Is [PERSON1] said to be a family member?\\nA:",
        "NOT_SPOUSE",
    ),
    (
        "person2_family",
        "Context: [TEXT]\\n\\nIs [PERSON2] said to be a family member?",
        "Context: \"[TEXT]\"\\nQ: Is [PERSON2] said to be a family member?\\nA:",
        "NOT_SPOUSE",
    ),
    (
        "dating",
        "Context: [TEXT]\\n\\nAre [PERSON1] and [PERSON2] dating?",
        "Context: \"[TEXT]\"\\nQ: Are [PERSON1] and [PERSON2] dating?\\nA:",
        "NOT_SPOUSE",
    ),
    (
        "coworkers",
        "Context: [TEXT]\\n\\nAre [PERSON1] and [PERSON2] co-workers?",
        "Context: \"[TEXT]\"\\nQ: Are [PERSON1] and [PERSON2] co-workers?\\nA:",
        "NOT_SPOUSE",
    ),
    (
        "married",
        "Are [PERSON1] and [PERSON2] married?",
        "Q: Are [PERSON1] and [PERSON2] married?\\nA:",
        "SPOUSE",
    ),
];

pub const SMS_T0PP_TEMPLATE: &str =
    "Does the following text message contain the words \"[KEYWORDS]\"?\\n\\n[TEXT]";
pub const SMS_GPT3_TEMPLATE: &str =
    "Q: Does the following text message \"[TEXT]\" contain the words \"[KEYWORDS]\"?\\nA:";

/// The source table renders the pound sign as `??`; it is restored here.
pub const SMS_SPAM_KEYWORDS: [&str; 42] = [
    "£1.50",
    "£500",
    "£5000",
    "call for offer",
    "cash prize",
    "chat date",
    "chat to",
    "childporn",
    "credits",
    "dating call",
    "direct",
    "expires now",
    "fantasies call",
    "free phones",
    "free price",
    "free ringtones",
    "free sex",
    "free tone",
    "guaranteed free",
    "guaranteed gift",
    "hard live girl",
    "important lucky",
    "inviting friends",
    "latest",
    "latest offer",
    "message call",
    "new mobiles",
    "no extra",
    "password",
    "please call",
    "sms reply",
    "unlimited calls",
    "urgent award guaranteed",
    "urgent prize",
    "voucher claim",
    "welcome reply",
    "win shopping",
    "winner reward",
    "won call",
    "won cash",
    "won cash prize",
    "won claim",
];

pub const SMS_HAM_KEYWORDS: [&str; 31] = [
    "I",
    "I can did",
    "I it",
    "I miss",
    "I used to",
    "adventuring",
    "amrita",
    "can't talk",
    "did u got",
    "do you",
    "fb",
    "goodo",
    "hee hee",
    "i'll",
    "jus",
    "link",
    "maggi",
    "mine",
    "my kids",
    "noisy",
    "praying",
    "shit",
    "should I",
    "thanks",
    "that's fine",
    "thats nice",
    "u how 2",
    "we will",
    "where are",
    "wtf",
    "your I",
];

/// Zero-shot rows: benchmark, T0++ template, GPT-3 template.
pub const ZERO_SHOT: [(Benchmark, &str, &str); 3] = [
    (
        Benchmark::Youtube,
        "Is the following comment spam?\\n\\n\"[TEXT]\"",
        "Q: Is the following comment \"[TEXT]\" spam? \\nA:",
    ),
    (
        Benchmark::Sms,
        "Is the following text message spam?\\n\\n\"[TEXT]\"",
        "Q: Is the following text message \"[TEXT]\" spam? \\nA:",
    ),
    (
        Benchmark::Spouse,
        "Context: \"[TEXT]\"\\n\\nAre [PERSON2] and [PERSON1] married?",
        "Context: \"[TEXT]\"\\nQ: Are [PERSON1] and [PERSON2] married? \\nA:",
    ),
];

pub const ZERO_SHOT_NAME: &str = "zero_shot";

/// `{yes: class, no: ABSTAIN}`.
pub fn yes_map(class: &str) -> IndexMap<String, String> {
    IndexMap::from([
        ("yes".to_string(), class.to_string()),
        ("no".to_string(), crate::prompt::ABSTAIN.to_string()),
    ])
}

fn spec(name: &str, template: &str, label_map: IndexMap<String, String>, family: Family) -> LfSpec {
    LfSpec {
        name: name.to_string(),
        template: template.to_string(),
        label_map,
        candidates: None,
        threshold: 0.0,
        backend: family.backend().to_string(),
        keywords: None,
        mode: Default::default(),
    }
}

fn row_specs(rows: &[PromptRow], family: Family) -> Vec<LfSpec> {
    rows.iter()
        .map(|&(name, t0pp, gpt3, class)| {
            let template = match family {
                Family::T0pp => t0pp,
                Family::Gpt3 => gpt3,
            };
            spec(name, template, yes_map(class), family)
        })
        .collect()
}

/// `£` becomes `gbp`; other non-alphanumeric runs become `_`.
pub fn keyword_slug(keyword: &str) -> String {
    let replaced = keyword.replace('£', "gbp").to_lowercase();
    let mut out = String::new();
    for part in replaced.split(|c: char| !c.is_ascii_alphanumeric()) {
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('_');
        }
        out.push_str(part);
    }
    out
}

fn sms_specs(family: Family) -> Vec<LfSpec> {
    let template = match family {
        Family::T0pp => SMS_T0PP_TEMPLATE,
        Family::Gpt3 => SMS_GPT3_TEMPLATE,
    };
    let tagged = SMS_SPAM_KEYWORDS
        .iter()
        .map(|k| ("spam", "SPAM", *k))
        .chain(SMS_HAM_KEYWORDS.iter().map(|k| ("ham", "HAM", *k)));
    tagged
        .map(|(prefix, class, keyword)| {
            let mut s = spec(
                &format!("{prefix}_{}", keyword_slug(keyword)),
                template,
                yes_map(class),
                family,
            );
            s.keywords = Some(keyword.to_string());
            s
        })
        .collect()
}

/// Labeler specs for a benchmark's prompted suite.
pub fn prompted_specs(benchmark: Benchmark, family: Family) -> Vec<LfSpec> {
    match benchmark {
        Benchmark::Youtube => row_specs(&YOUTUBE, family),
        Benchmark::Sms => sms_specs(family),
        Benchmark::Spouse => row_specs(&SPOUSE, family),
    }
}

/// Single-labeler zero-shot spec.
pub fn zero_shot_specs(benchmark: Benchmark, family: Family) -> Vec<LfSpec> {
    let (_, t0pp, gpt3) = ZERO_SHOT
        .iter()
        .find(|(b, _, _)| *b == benchmark)
        .expect("every benchmark has a zero-shot row");
    let template = match family {
        Family::T0pp => t0pp,
        Family::Gpt3 => gpt3,
    };
    let classes = benchmark.classes();
    let label_map = IndexMap::from([
        ("no".to_string(), classes.name(0).to_string()),
        ("yes".to_string(), classes.name(1).to_string()),
    ]);
    vec![spec(ZERO_SHOT_NAME, template, label_map, family)]
}

pub fn prompted_suite(benchmark: Benchmark, family: Family) -> Result<LabelerSuite> {
    LabelerSuite::from_specs(&prompted_specs(benchmark, family), &benchmark.classes())
}

pub fn zero_shot_suite(benchmark: Benchmark, family: Family) -> Result<LabelerSuite> {
    LabelerSuite::from_specs(&zero_shot_specs(benchmark, family), &benchmark.classes())
}

/// File name of a shipped suite, e.g. `youtube.t0pp.labelers.json`.
pub fn suite_file_name(benchmark: Benchmark, family: Family, zero_shot: bool) -> String {
    let kind = if zero_shot { ".zeroshot" } else { "" };
    format!(
        "{}{kind}.{}.labelers.json",
        benchmark.slug(),
        family.backend()
    )
}

/// Writes every prompted and zero-shot suite plus `{benchmark}.classes.json`.
pub fn write_suites(dir: impl AsRef<std::path::Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for b in Benchmark::ALL {
        for f in Family::ALL {
            prompted_suite(b, f)?.save(dir.join(suite_file_name(b, f, false)))?;
            zero_shot_suite(b, f)?.save(dir.join(suite_file_name(b, f, true)))?;
        }
    }
    Ok(())
}
