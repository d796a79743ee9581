//! CoNLL 2003 corpus reading, writing, sampling and tag/span conversion.
//!
//! Tags are held in IOB2 internally. IOB1 input is converted as it is read and
//! converted back on write when requested. Columns between the token and the
//! NER tag (POS, chunk) are kept verbatim so a parse/write cycle reproduces the
//! input bytes.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::label::{self, Label, LabelSet, Tag, TagScheme};

const DOCSTART: &str = "-DOCSTART-";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected at least 2 columns, found {found}")]
    TooFewColumns { line: usize, found: usize },
    #[error("line {line}: tag `{tag}` is not O or B-/I- followed by a known type")]
    BadTag { line: usize, tag: String },
    #[error("sentence {0} has no tags")]
    MissingTags(String),
    #[error("sentence {id}: {tags} tags for {tokens} tokens")]
    LengthMismatch { id: String, tokens: usize, tags: usize },
    #[error("sentence {0} contains an empty token")]
    EmptyToken(String),
    #[error("mentions {first} and {second} overlap")]
    Overlap { first: String, second: String },
    #[error("mention {mention} does not fit in a sentence of {len} tokens")]
    OutOfRange { mention: String, len: usize },
    #[error("mention {0} is discontinuous and cannot be written as flat tags")]
    Discontinuous(String),
    #[error("invalid mention spans: {0}")]
    BadSpans(String),
    #[error("cannot sample {n} sentences from a population of {population}")]
    SampleTooLarge { n: usize, population: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a sentence came from. Also the prefix of generated sentence ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    ConllTrain,
    ConllTest,
    Bbc,
    #[default]
    Other,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::ConllTrain => "conll-train",
            Source::ConllTest => "conll-test",
            Source::Bbc => "bbc",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conll-train" => Ok(Source::ConllTrain),
            "conll-test" => Ok(Source::ConllTest),
            "bbc" => Ok(Source::Bbc),
            "other" => Ok(Source::Other),
            _ => Err(format!("unknown source `{s}`")),
        }
    }
}

/// A pre-tokenized sentence with optional gold tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub source: Source,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_tags: Option<Vec<Tag>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    /// Opaque middle columns per token, as read from CoNLL.
    #[serde(skip)]
    pub columns: Vec<Vec<String>>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, source: Source, tokens: Vec<String>) -> Self {
        Sentence {
            id: id.into(),
            source,
            tokens,
            gold_tags: None,
            doc_id: None,
            columns: Vec::new(),
        }
    }

    pub fn with_tags(mut self, tags: Vec<Tag>) -> Self {
        self.gold_tags = Some(tags);
        self
    }

    /// Tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold mentions, or an empty list when the sentence is untagged.
    pub fn gold_mentions(&self) -> Vec<EntityMention> {
        self.gold_tags
            .as_deref()
            .map(|tags| tags_to_spans(tags, &self.tokens))
            .unwrap_or_default()
    }

    /// Checks the structural invariants: tag count, tag types, non-empty tokens.
    pub fn validate(&self, labels: &LabelSet) -> Result<(), CorpusError> {
        if self.tokens.iter().any(String::is_empty) {
            return Err(CorpusError::EmptyToken(self.id.clone()));
        }
        if let Some(tags) = &self.gold_tags {
            if tags.len() != self.tokens.len() {
                return Err(CorpusError::LengthMismatch {
                    id: self.id.clone(),
                    tokens: self.tokens.len(),
                    tags: tags.len(),
                });
            }
            if let Some(bad) = tags.iter().find(|t| t.label().is_some_and(|l| !labels.contains(l))) {
                return Err(CorpusError::BadTag { line: 0, tag: bad.to_string() });
            }
        }
        Ok(())
    }
}

/// Inclusive token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// A typed entity occupying one span (contiguous) or several (discontinuous).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub etype: Label,
    pub spans: Vec<Span>,
    pub surfaces: Vec<String>,
}

impl EntityMention {
    /// A contiguous mention over `tokens[start..=end]`.
    pub fn contiguous(etype: Label, start: usize, end: usize, tokens: &[String]) -> Self {
        let span = Span::new(start, end);
        EntityMention {
            etype,
            surfaces: vec![surface_of(span, tokens)],
            spans: vec![span],
        }
    }

    /// Builds a mention from sorted, pairwise disjoint spans.
    pub fn from_spans(etype: Label, spans: Vec<Span>, tokens: &[String]) -> Result<Self, CorpusError> {
        if spans.is_empty() {
            return Err(CorpusError::BadSpans("no spans".into()));
        }
        for w in spans.windows(2) {
            if w[1].start <= w[0].end {
                return Err(CorpusError::BadSpans(format!("{} and {} are unsorted or overlap", w[0], w[1])));
            }
        }
        if let Some(s) = spans.iter().find(|s| s.start > s.end || s.end >= tokens.len()) {
            return Err(CorpusError::BadSpans(format!("{s} outside 0-{}", tokens.len().saturating_sub(1))));
        }
        let surfaces = spans.iter().map(|s| surface_of(*s, tokens)).collect();
        Ok(EntityMention { etype, spans, surfaces })
    }

    pub fn is_contiguous(&self) -> bool {
        self.spans.len() == 1
    }

    pub fn first_start(&self) -> usize {
        self.spans[0].start
    }

    /// Total number of tokens covered.
    pub fn token_count(&self) -> usize {
        self.spans.iter().map(Span::len).sum()
    }

    pub fn token_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans.iter().flat_map(|s| s.start..=s.end)
    }

    /// Splits into one contiguous mention per span.
    pub fn fragments(&self) -> Vec<EntityMention> {
        self.spans
            .iter()
            .zip(&self.surfaces)
            .map(|(span, surface)| EntityMention {
                etype: self.etype.clone(),
                spans: vec![*span],
                surfaces: vec![surface.clone()],
            })
            .collect()
    }
}

impl fmt::Display for EntityMention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.etype)?;
        for (i, s) in self.spans.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str(")")
    }
}

fn surface_of(span: Span, tokens: &[String]) -> String {
    tokens[span.start..=span.end].join(" ")
}

/// Result of reading a CoNLL stream.
#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub sentences: Vec<Sentence>,
    pub warnings: Vec<String>,
}

/// CoNLL reader configuration.
#[derive(Debug, Clone)]
pub struct ConllReader {
    pub scheme: TagScheme,
    pub source: Source,
    pub labels: LabelSet,
}

impl ConllReader {
    pub fn new(scheme: TagScheme, source: Source) -> Self {
        ConllReader { scheme, source, labels: LabelSet::default() }
    }

    pub fn with_labels(mut self, labels: LabelSet) -> Self {
        self.labels = labels;
        self
    }

    pub fn read<R: BufRead>(&self, input: R) -> Result<ParsedCorpus, CorpusError> {
        let mut out = ParsedCorpus::default();
        let mut doc_ordinal = 0usize;
        let mut doc_id: Option<String> = None;
        let mut block = Block::default();
        let mut after_docstart = false;

        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                if block.tokens.is_empty() {
                    if !after_docstart && lineno > 1 {
                        out.warnings.push(format!("line {lineno}: empty sentence skipped"));
                    }
                } else {
                    self.finish(&mut block, &doc_id, &mut out.sentences);
                }
                after_docstart = false;
                continue;
            }
            if cols[0] == DOCSTART {
                if !block.tokens.is_empty() {
                    self.finish(&mut block, &doc_id, &mut out.sentences);
                }
                doc_id = Some(format!("{}-doc-{:04}", self.source, doc_ordinal));
                doc_ordinal += 1;
                after_docstart = true;
                continue;
            }
            after_docstart = false;
            if cols.len() < 2 {
                return Err(CorpusError::TooFewColumns { line: lineno, found: cols.len() });
            }
            let raw_tag = cols[cols.len() - 1];
            let tag = Tag::parse_with(raw_tag, &self.labels)
                .map_err(|_| CorpusError::BadTag { line: lineno, tag: raw_tag.to_string() })?;
            block.tokens.push(cols[0].nfc().collect());
            block.columns.push(cols[1..cols.len() - 1].iter().map(|c| c.to_string()).collect());
            block.tags.push(tag);
        }
        if !block.tokens.is_empty() {
            self.finish(&mut block, &doc_id, &mut out.sentences);
        }
        for w in &out.warnings {
            log::warn!("{w}");
        }
        Ok(out)
    }

    fn finish(&self, block: &mut Block, doc_id: &Option<String>, sentences: &mut Vec<Sentence>) {
        let block = std::mem::take(block);
        let id = format!("{}-{:05}", self.source, sentences.len());
        sentences.push(Sentence {
            id,
            source: self.source,
            tokens: block.tokens,
            gold_tags: Some(label::normalize(&block.tags, self.scheme)),
            doc_id: doc_id.clone(),
            columns: block.columns,
        });
    }
}

#[derive(Default)]
struct Block {
    tokens: Vec<String>,
    columns: Vec<Vec<String>>,
    tags: Vec<Tag>,
}

/// Reads CoNLL text with the default label set, logging skipped empty sentences.
pub fn parse_conll<R: BufRead>(input: R, scheme: TagScheme, source: Source) -> Result<Vec<Sentence>, CorpusError> {
    Ok(ConllReader::new(scheme, source).read(input)?.sentences)
}

/// Writes sentences as CoNLL: one token per line, single-space separated, blank
/// line after each sentence. A `-DOCSTART-` block is emitted whenever `doc_id`
/// changes to a new value.
pub fn write_conll<W: Write>(sentences: &[Sentence], scheme: TagScheme, mut out: W) -> Result<(), CorpusError> {
    let mut current_doc: Option<&str> = None;
    for s in sentences {
        let tags = s.gold_tags.as_ref().ok_or_else(|| CorpusError::MissingTags(s.id.clone()))?;
        if tags.len() != s.tokens.len() {
            return Err(CorpusError::LengthMismatch { id: s.id.clone(), tokens: s.tokens.len(), tags: tags.len() });
        }
        if let Some(doc) = s.doc_id.as_deref() {
            if current_doc != Some(doc) {
                let middle = s.columns.first().map_or(0, Vec::len);
                write!(out, "{DOCSTART}")?;
                for _ in 0..middle {
                    write!(out, " -X-")?;
                }
                writeln!(out, " O")?;
                writeln!(out)?;
                current_doc = Some(doc);
            }
        }
        let tags = label::denormalize(tags, scheme);
        for (i, (token, tag)) in s.tokens.iter().zip(&tags).enumerate() {
            write!(out, "{token}")?;
            if let Some(cols) = s.columns.get(i) {
                for c in cols {
                    write!(out, " {c}")?;
                }
            }
            writeln!(out, " {tag}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Serializes to an in-memory CoNLL string.
pub fn conll_string(sentences: &[Sentence], scheme: TagScheme) -> Result<String, CorpusError> {
    let mut buf = Vec::new();
    write_conll(sentences, scheme, &mut buf)?;
    Ok(String::from_utf8(buf).expect("tokens are valid UTF-8"))
}

/// Collects maximal chunks from an IOB2 sequence, sorted by start.
///
/// A stray `I-X` that does not continue an `X` chunk opens a new one.
pub fn tags_to_spans(tags: &[Tag], tokens: &[String]) -> Vec<EntityMention> {
    let mut out = Vec::new();
    let mut open: Option<(Label, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let continues = matches!((tag, &open), (Tag::Inside(l), Some((cur, _))) if l == cur);
        if continues {
            continue;
        }
        if let Some((l, start)) = open.take() {
            out.push(EntityMention::contiguous(l, start, i - 1, tokens));
        }
        if let Some(l) = tag.label() {
            open = Some((l.clone(), i));
        }
    }
    if let Some((l, start)) = open {
        out.push(EntityMention::contiguous(l, start, tags.len() - 1, tokens));
    }
    out
}

/// Writes flat, non-overlapping mentions as an IOB2 sequence of `length` tags.
pub fn spans_to_tags(mentions: &[EntityMention], length: usize) -> Result<Vec<Tag>, CorpusError> {
    let mut tags = vec![Tag::Outside; length];
    let mut owner: Vec<Option<usize>> = vec![None; length];
    for (mi, m) in mentions.iter().enumerate() {
        if !m.is_contiguous() {
            return Err(CorpusError::Discontinuous(m.to_string()));
        }
        let span = m.spans[0];
        if span.start > span.end || span.end >= length {
            return Err(CorpusError::OutOfRange { mention: m.to_string(), len: length });
        }
        for pos in span.start..=span.end {
            if let Some(prev) = owner[pos] {
                return Err(CorpusError::Overlap {
                    first: mentions[prev].to_string(),
                    second: m.to_string(),
                });
            }
            owner[pos] = Some(mi);
            tags[pos] = if pos == span.start {
                Tag::Begin(m.etype.clone())
            } else {
                Tag::Inside(m.etype.clone())
            };
        }
    }
    Ok(tags)
}

/// Uniform sample of `n` sentences without replacement, in original order.
pub fn sample_sentences(sentences: &[Sentence], n: usize, seed: u64) -> Result<Vec<Sentence>, CorpusError> {
    sample_excluding(sentences, n, seed, &HashSet::new())
}

/// As [`sample_sentences`] but never picks an id in `exclude`. Used to draw a
/// second sample disjoint from a first one.
pub fn sample_excluding(
    sentences: &[Sentence],
    n: usize,
    seed: u64,
    exclude: &HashSet<String>,
) -> Result<Vec<Sentence>, CorpusError> {
    let pool: Vec<&Sentence> = sentences.iter().filter(|s| !exclude.contains(&s.id)).collect();
    if n > pool.len() {
        return Err(CorpusError::SampleTooLarge { n, population: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

/// Keeps sentences with at least `min_tokens` tokens.
pub fn filter_by_length(sentences: &[Sentence], min_tokens: usize) -> Vec<Sentence> {
    sentences.iter().filter(|s| s.len() >= min_tokens).cloned().collect()
}
