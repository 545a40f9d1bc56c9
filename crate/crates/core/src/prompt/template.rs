use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Example;
use crate::{Error, Result};

/// The slots a template may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    Text,
    Person1,
    Person2,
    Keywords,
}

impl Placeholder {
    pub const ALL: [Placeholder; 4] = [
        Placeholder::Text,
        Placeholder::Person1,
        Placeholder::Person2,
        Placeholder::Keywords,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Text => "TEXT",
            Placeholder::Person1 => "PERSON1",
            Placeholder::Person2 => "PERSON2",
            Placeholder::Keywords => "KEYWORDS",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Whether the slot is filled from example content (as opposed to
    /// labeling-function configuration like keywords).
    pub fn is_content(self) -> bool {
        !matches!(self, Placeholder::Keywords)
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(Placeholder),
}

/// A prompt pattern with `[TEXT]`, `[PERSON1]`, `[PERSON2]` and `[KEYWORDS]`
/// slots. Literal `\n` escapes in the source expand to newlines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    pieces: Vec<Piece>,
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_uppercase())
        && s.chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self> {
        let expanded = source.replace("\\n", "\n");
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = expanded.as_str();
        while let Some(open) = rest.find('[') {
            let after = &rest[open + 1..];
            match after.find(']') {
                Some(close) if is_placeholder_name(&after[..close]) => {
                    let name = &after[..close];
                    let slot = Placeholder::parse(name).ok_or_else(|| {
                        Error::Validation(format!("unknown placeholder [{name}] in template"))
                    })?;
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Slot(slot));
                    rest = &after[close + 1..];
                }
                _ => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }
        Ok(Self {
            source: source.to_string(),
            pieces,
        })
    }

    /// The pattern as written, escapes unexpanded.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn placeholders(&self) -> impl Iterator<Item = Placeholder> + '_ {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(*s),
            Piece::Literal(_) => None,
        })
    }

    /// Substitutes every slot in one left-to-right pass; substituted text is
    /// never re-scanned.
    pub fn render_with<'a>(
        &self,
        mut lookup: impl FnMut(Placeholder) -> Option<&'a str>,
    ) -> Result<String> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(slot) => {
                    let value = lookup(*slot).ok_or_else(|| Error::Render(slot.name().into()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    pub fn render(&self, example: &Example) -> Result<String> {
        self.render_with(|slot| example.field(slot.name()))
    }
}

impl Serialize for PromptTemplate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for PromptTemplate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PromptTemplate::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_zero_shot_youtube_prompt() {
        let t = PromptTemplate::parse(r#"Is the following comment spam?\n\n"[TEXT]""#).unwrap();
        let e = Example::new("e", "Subscribe to my channel!", None);
        assert_eq!(
            t.render(&e).unwrap(),
            "Is the following comment spam?\n\n\"Subscribe to my channel!\""
        );
    }

    #[test]
    fn no_placeholders_is_identity() {
        let t = PromptTemplate::parse("Plain question?").unwrap();
        assert_eq!(
            t.render(&Example::new("e", "x", None)).unwrap(),
            "Plain question?"
        );
    }

    #[test]
    fn missing_field_names_the_placeholder() {
        let t = PromptTemplate::parse("Are [PERSON1] and [PERSON2] married?").unwrap();
        let e = Example::new("e", "x", None);
        match t.render(&e) {
            Err(Error::Render(name)) => assert_eq!(name, "PERSON1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_placeholder_is_rejected_but_brackets_are_fine() {
        assert!(PromptTemplate::parse("Hello [NAME]").is_err());
        let t = PromptTemplate::parse("a [b] [ c ] [TEXT]").unwrap();
        assert_eq!(
            t.placeholders().collect::<Vec<_>>(),
            vec![Placeholder::Text]
        );
        let e = Example::new("e", "[TEXT]", None);
        // substituted content is not expanded again
        assert_eq!(t.render(&e).unwrap(), "a [b] [ c ] [TEXT]");
    }
}
