//! Ordered repair rules applied to parsed model output before alignment.
//!
//! 1. pairs whose label is outside the configured set are dropped;
//! 2. surfaces are NFC-normalized;
//! 3. a surface absent from the sentence verbatim is retried ignoring case and,
//!    if found, replaced by the sentence's own spelling ("case repair");
//! 4. anything still absent is dropped ("hallucinated surface").
//!
//! A surviving surface always occurs in the sentence as a run of whole tokens.
//!
//! These rules reconstruct a manual clean-up pass that was never written down;
//! treat them as a reasonable default, not a reference procedure.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::output::RawPair;
use crate::align::find_occurrences;
use crate::corpus::Sentence;
use crate::label::LabelSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairPolicy {
    /// Enables rule 3.
    pub case_repair: bool,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy { case_repair: true }
    }
}

pub fn repair_output(
    pairs: &[RawPair],
    sentence: &Sentence,
    labels: &LabelSet,
    policy: &RepairPolicy,
) -> (Vec<RawPair>, Vec<String>) {
    let mut kept = Vec::with_capacity(pairs.len());
    let mut notes = Vec::new();
    for pair in pairs {
        if !labels.contains_str(&pair.label) {
            notes.push(format!("unknown label {}: dropped '{}'", pair.label, pair.surface));
            continue;
        }
        let surface: String = pair.surface.nfc().collect();
        let words: Vec<&str> = surface.split_whitespace().collect();
        if words.is_empty() {
            notes.push(format!("empty surface under {} dropped", pair.label));
            continue;
        }
        if !find_occurrences(&sentence.tokens, &words, false).is_empty() {
            kept.push(RawPair { surface: words.join(" "), ..pair.clone() });
            continue;
        }
        if policy.case_repair {
            if let Some(&start) = find_occurrences(&sentence.tokens, &words, true).first() {
                let fixed = sentence.tokens[start..start + words.len()].join(" ");
                notes.push(format!("case repair: {} '{}' -> '{}'", pair.label, pair.surface, fixed));
                kept.push(RawPair { surface: fixed, ..pair.clone() });
                continue;
            }
        }
        notes.push(format!("hallucinated surface: {} '{}' dropped", pair.label, pair.surface));
    }
    (kept, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;

    fn sentence(text: &str) -> Sentence {
        Sentence::new("t-0", Source::Other, text.split_whitespace().map(String::from).collect())
    }

    fn run(pairs: &[RawPair], text: &str) -> (Vec<RawPair>, Vec<String>) {
        repair_output(pairs, &sentence(text), &LabelSet::default(), &RepairPolicy::default())
    }

    #[test]
    fn case_repair_keeps_source_spelling() {
        let (kept, notes) = run(&[RawPair::new("PER", "todd stottlemyre")], "Todd Stottlemyre pitched");
        assert_eq!(kept, [RawPair::new("PER", "Todd Stottlemyre")]);
        assert_eq!(notes.len(), 1);
        assert!(notes[0].starts_with("case repair"));
    }

    #[test]
    fn hallucination_dropped() {
        let (kept, notes) = run(&[RawPair::new("LOC", "Narnia")], "a trip to Paris");
        assert!(kept.is_empty());
        assert!(notes[0].starts_with("hallucinated surface"));
    }

    #[test]
    fn verbatim_untouched() {
        let pairs = [RawPair::new("LOC", "Paris"), RawPair::new("PER", "Ann Lee")];
        let (kept, notes) = run(&pairs, "Ann Lee flew to Paris");
        assert_eq!(kept, pairs);
        assert!(notes.is_empty());
    }

    #[test]
    fn unknown_label_and_disabled_case_repair() {
        let (kept, notes) = run(&[RawPair::new("DATE", "Monday")], "on Monday");
        assert!(kept.is_empty());
        assert!(notes[0].starts_with("unknown label DATE"));

        let strict = RepairPolicy { case_repair: false };
        let (kept, _) = repair_output(&[RawPair::new("LOC", "paris")], &sentence("to Paris"), &LabelSet::default(), &strict);
        assert!(kept.is_empty());
    }

    #[test]
    fn partial_token_is_not_a_match() {
        let (kept, _) = run(&[RawPair::new("LOC", "Houston")], "the Houstonian team");
        assert!(kept.is_empty());
    }

    #[test]
    fn nfc_applied() {
        let (kept, notes) = run(&[RawPair::new("LOC", "Zu\u{308}rich")], "in Z\u{fc}rich");
        assert_eq!(kept[0].surface, "Z\u{fc}rich");
        assert!(notes.is_empty());
    }
}
