//! Entity labels, IOB tags and tag-scheme conversion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// An entity type such as `PER` or `LOC`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(name: impl Into<String>) -> Self {
        Label(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for Label {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_string())
    }
}

/// The configured, ordered set of entity labels.
///
/// The default is the CoNLL 2003 inventory `LOC, ORG, PER, MISC`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<Label>);

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet::new(["LOC", "ORG", "PER", "MISC"].map(Label::from))
    }
}

impl LabelSet {
    /// Builds a label set, dropping repeated labels while keeping first-seen order.
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut out: Vec<Label> = Vec::new();
        for l in labels {
            if !out.contains(&l) {
                out.push(l);
            }
        }
        LabelSet(out)
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.0.contains(label)
    }

    pub fn contains_str(&self, label: &str) -> bool {
        self.0.iter().any(|l| l.as_str() == label)
    }

    pub fn get(&self, label: &str) -> Option<&Label> {
        self.0.iter().find(|l| l.as_str() == label)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Label> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True if both sets hold the same labels regardless of order.
    pub fn same_members(&self, other: &LabelSet) -> bool {
        self.len() == other.len() && self.iter().all(|l| other.contains(l))
    }
}

impl<'a> IntoIterator for &'a LabelSet {
    type Item = &'a Label;
    type IntoIter = std::slice::Iter<'a, Label>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid tag `{0}`")]
pub struct TagParseError(pub String);

/// A single IOB tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(Label),
    Inside(Label),
}

impl Tag {
    pub fn label(&self) -> Option<&Label> {
        match self {
            Tag::Outside => None,
            Tag::Begin(l) | Tag::Inside(l) => Some(l),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Tag::Outside)
    }

    /// Parses a tag and checks its type against `labels`.
    pub fn parse_with(s: &str, labels: &LabelSet) -> Result<Tag, TagParseError> {
        let tag: Tag = s.parse()?;
        match tag.label() {
            Some(l) if !labels.contains(l) => Err(TagParseError(s.to_string())),
            _ => Ok(tag),
        }
    }
}

impl FromStr for Tag {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, ty) = s.split_once('-').ok_or_else(|| TagParseError(s.to_string()))?;
        if ty.is_empty() || ty.chars().any(char::is_whitespace) {
            return Err(TagParseError(s.to_string()));
        }
        match prefix {
            "B" => Ok(Tag::Begin(Label::new(ty))),
            "I" => Ok(Tag::Inside(Label::new(ty))),
            _ => Err(TagParseError(s.to_string())),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(l) => write!(f, "B-{l}"),
            Tag::Inside(l) => write!(f, "I-{l}"),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// IOB tagging variant.
///
/// In IOB1 a `B-` prefix only appears on a chunk that directly follows another
/// chunk of the same type; IOB2 starts every chunk with `B-`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TagScheme {
    Iob1,
    #[default]
    Iob2,
}

impl FromStr for TagScheme {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iob1" => Ok(TagScheme::Iob1),
            "iob2" | "bio" => Ok(TagScheme::Iob2),
            _ => Err(TagParseError(s.to_string())),
        }
    }
}

/// Rewrites an arbitrary IOB1-or-IOB2 sequence into canonical IOB2.
///
/// Any `I-X` that does not continue a chunk of type `X` opens a new chunk. This is
/// total: every input yields a valid IOB2 sequence.
pub fn to_iob2(tags: &[Tag]) -> Vec<Tag> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev: Option<&Label> = None;
    for tag in tags {
        let next = match tag {
            Tag::Inside(l) if prev != Some(l) => Tag::Begin(l.clone()),
            other => other.clone(),
        };
        prev = tag.label();
        out.push(next);
    }
    out
}

/// Rewrites a valid IOB2 sequence into canonical IOB1.
pub fn to_iob1(tags: &[Tag]) -> Vec<Tag> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev: Option<&Label> = None;
    for tag in tags {
        let next = match tag {
            Tag::Begin(l) if prev != Some(l) => Tag::Inside(l.clone()),
            other => other.clone(),
        };
        prev = tag.label();
        out.push(next);
    }
    out
}

/// Converts a sequence from `scheme` into IOB2.
pub fn normalize(tags: &[Tag], scheme: TagScheme) -> Vec<Tag> {
    match scheme {
        // IOB2 input may still carry stray `I-` starts; repair them the same way.
        TagScheme::Iob1 | TagScheme::Iob2 => to_iob2(tags),
    }
}

/// Converts an IOB2 sequence into `scheme`.
pub fn denormalize(tags: &[Tag], scheme: TagScheme) -> Vec<Tag> {
    match scheme {
        TagScheme::Iob1 => to_iob1(tags),
        TagScheme::Iob2 => tags.to_vec(),
    }
}
