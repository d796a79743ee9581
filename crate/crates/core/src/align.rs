//! Surface-to-span alignment and flattening of nested mentions into flat tags.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::annotate::output::RawPair;
use crate::annotate::{AnnotationRecord, Provenance};
use crate::corpus::{spans_to_tags, CorpusError, EntityMention, Sentence, Span};
use crate::label::{Label, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlattenRule {
    #[default]
    LongestSpanWins,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentPolicy {
    /// Try exact token matches before falling back to case-insensitive ones.
    /// When false, matching is case-insensitive from the start.
    pub case_sensitive_first: bool,
    /// Emit every non-overlapping occurrence of a surface. When false, the
    /// k-th repetition of an identical pair claims the k-th occurrence.
    pub all_occurrences: bool,
    pub flatten_rule: FlattenRule,
    /// Priority among mentions with identical spans, highest first.
    pub type_tiebreak: Vec<Label>,
}

impl Default for AlignmentPolicy {
    fn default() -> Self {
        AlignmentPolicy {
            case_sensitive_first: true,
            all_occurrences: true,
            flatten_rule: FlattenRule::LongestSpanWins,
            type_tiebreak: ["PER", "LOC", "ORG", "MISC"].map(Label::from).to_vec(),
        }
    }
}

impl AlignmentPolicy {
    fn type_rank(&self, label: &Label) -> usize {
        self.type_tiebreak.iter().position(|l| l == label).unwrap_or(self.type_tiebreak.len())
    }
}

/// Start positions of every (possibly overlapping) occurrence of `words` as
/// consecutive tokens.
pub fn find_occurrences<S: AsRef<str>>(tokens: &[String], words: &[S], case_insensitive: bool) -> Vec<usize> {
    if words.is_empty() || words.len() > tokens.len() {
        return Vec::new();
    }
    let eq = |a: &str, b: &str| {
        if case_insensitive {
            a == b || a.to_lowercase() == b.to_lowercase()
        } else {
            a == b
        }
    };
    (0..=tokens.len() - words.len())
        .filter(|&i| words.iter().enumerate().all(|(j, w)| eq(&tokens[i + j], w.as_ref())))
        .collect()
}

/// Left-to-right greedy selection of non-overlapping occurrences.
fn greedy(starts: &[usize], width: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut free_from = 0;
    for &s in starts {
        if s >= free_from {
            out.push(s);
            free_from = s + width;
        }
    }
    out
}

fn surface_words(surface: &str) -> Vec<String> {
    surface.nfc().collect::<String>().split_whitespace().map(String::from).collect()
}

fn occurrences(tokens: &[String], words: &[String], policy: &AlignmentPolicy) -> Vec<usize> {
    if policy.case_sensitive_first {
        let exact = find_occurrences(tokens, words, false);
        if !exact.is_empty() {
            return exact;
        }
    }
    find_occurrences(tokens, words, true)
}

/// Maps `(label, surface)` pairs onto token spans of `sentence`.
///
/// Surfaces that cannot be found are omitted. Pairs sharing a `group` become a
/// single discontinuous mention, each fragment matched at its first occurrence
/// after the previous fragment. Output is sorted by position and free of
/// duplicates.
pub fn align_surface_to_spans(sentence: &Sentence, pairs: &[RawPair], policy: &AlignmentPolicy) -> Vec<EntityMention> {
    let tokens = &sentence.tokens;
    let mut out: Vec<EntityMention> = Vec::new();
    let mut repeats: HashMap<(&str, &str), usize> = HashMap::new();
    let mut groups: Vec<(&str, usize, Vec<&str>)> = Vec::new();

    for pair in pairs {
        if let Some(g) = pair.group {
            match groups.iter_mut().find(|(l, id, _)| *l == pair.label && *id == g) {
                Some((_, _, frags)) => frags.push(&pair.surface),
                None => groups.push((&pair.label, g, vec![&pair.surface])),
            }
            continue;
        }
        let words = surface_words(&pair.surface);
        if words.is_empty() {
            continue;
        }
        let picks = greedy(&occurrences(tokens, &words, policy), words.len());
        let label = Label::new(pair.label.as_str());
        if policy.all_occurrences {
            for s in picks {
                out.push(EntityMention::contiguous(label.clone(), s, s + words.len() - 1, tokens));
            }
        } else {
            let k = repeats.entry((&pair.label, &pair.surface)).or_insert(0);
            if let Some(&s) = picks.get(*k) {
                out.push(EntityMention::contiguous(label, s, s + words.len() - 1, tokens));
            }
            *k += 1;
        }
    }

    for (label, _, frags) in groups {
        if let Some(m) = align_group(tokens, label, &frags, policy) {
            out.push(m);
        }
    }

    out.sort_by(|a, b| (&a.spans, &a.etype).cmp(&(&b.spans, &b.etype)));
    out.dedup();
    out
}

fn align_group(tokens: &[String], label: &str, frags: &[&str], policy: &AlignmentPolicy) -> Option<EntityMention> {
    let mut spans: Vec<Span> = Vec::new();
    for frag in frags {
        let words = surface_words(frag);
        if words.is_empty() {
            continue;
        }
        let min_start = spans.last().map_or(0, |s| s.end + 1);
        let start = occurrences(tokens, &words, policy).into_iter().find(|&s| s >= min_start)?;
        let span = Span::new(start, start + words.len() - 1);
        match spans.last_mut() {
            Some(prev) if prev.end + 1 == span.start => prev.end = span.end,
            _ => spans.push(span),
        }
    }
    if spans.is_empty() {
        return None;
    }
    EntityMention::from_spans(Label::new(label), spans, tokens).ok()
}

pub const FRAGMENT_TAG: &str = "fragment-of-discontinuous";

/// Outcome of [`flatten`]. `kept` and `dropped` partition the input after
/// discontinuous mentions have been split into fragments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlattenReport {
    pub kept: Vec<EntityMention>,
    pub dropped: Vec<(EntityMention, String)>,
    /// Number of discontinuous input mentions that were split.
    pub discontinuous: usize,
}

/// Resolves overlaps: longest span first, then leftmost, then type priority.
/// A candidate is kept iff none of its tokens is already taken.
pub fn flatten(mentions: &[EntityMention], policy: &AlignmentPolicy) -> FlattenReport {
    let mut report = FlattenReport::default();
    let mut candidates: Vec<(EntityMention, bool)> = Vec::new();
    for m in mentions {
        if m.is_contiguous() {
            candidates.push((m.clone(), false));
        } else {
            report.discontinuous += 1;
            candidates.extend(m.fragments().into_iter().map(|f| (f, true)));
        }
    }
    candidates.sort_by(|(a, _), (b, _)| {
        let (sa, sb) = (a.spans[0], b.spans[0]);
        sb.len()
            .cmp(&sa.len())
            .then(sa.start.cmp(&sb.start))
            .then(policy.type_rank(&a.etype).cmp(&policy.type_rank(&b.etype)))
            .then(a.etype.cmp(&b.etype))
    });

    let mut kept: Vec<EntityMention> = Vec::new();
    for (cand, fragment) in candidates {
        let span = cand.spans[0];
        match kept.iter().find(|k| k.spans[0].overlaps(&span)) {
            None => kept.push(cand),
            Some(k) => {
                let ks = k.spans[0];
                let mut reason = if ks == span && k.etype == cand.etype {
                    "duplicate".to_string()
                } else if ks == span {
                    format!("same span as {k}, lower type priority")
                } else if ks.contains(&span) {
                    "covered by longer span".to_string()
                } else {
                    format!("overlaps kept span {k}")
                };
                if fragment {
                    reason.push_str(&format!(" ({FRAGMENT_TAG})"));
                }
                report.dropped.push((cand, reason));
            }
        }
    }
    kept.sort_by_key(|m| m.spans[0]);
    report.kept = kept;
    report
}

/// Flattens a record's mentions and writes them as IOB2 tags.
pub fn record_to_tags(
    sentence: &Sentence,
    record: &AnnotationRecord,
    policy: &AlignmentPolicy,
) -> Result<(Vec<Tag>, FlattenReport), CorpusError> {
    let report = flatten(&record.entities, policy);
    let tags = spans_to_tags(&report.kept, sentence.len())?;
    Ok((tags, report))
}

/// A record after flattening, in the aligned-record JSONL shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub sentence_id: String,
    pub provenance: Provenance,
    pub entities: Vec<EntityMention>,
    pub dropped: Vec<DroppedMention>,
    pub repairs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedMention {
    #[serde(flatten)]
    pub mention: EntityMention,
    pub reason: String,
}

impl AlignedRecord {
    pub fn new(record: &AnnotationRecord, report: &FlattenReport) -> Self {
        AlignedRecord {
            sentence_id: record.sentence_id.clone(),
            provenance: record.provenance,
            entities: record.entities.clone(),
            dropped: report
                .dropped
                .iter()
                .map(|(m, r)| DroppedMention { mention: m.clone(), reason: r.clone() })
                .collect(),
            repairs: record.repairs.clone(),
        }
    }
}
