mod common;

use nerdistill::align::{align_surface_to_spans, flatten, record_to_tags};
use nerdistill::annotate::output::RawPair;
use nerdistill::annotate::{record_from_transcript, AnnotationRecord, PostProcess};
use nerdistill::corpus::{tags_to_spans, EntityMention, Sentence, Source};
use nerdistill::{AlignmentPolicy, Label, LabelSet, Provenance};
use proptest::prelude::*;

fn gold_pairs(s: &Sentence) -> Vec<RawPair> {
    s.gold_mentions().iter().map(|m| RawPair::new(m.etype.as_str(), m.surfaces[0].clone())).collect()
}

fn short(ms: &[EntityMention]) -> Vec<(String, usize, usize)> {
    let mut v: Vec<_> = ms.iter().map(|m| (m.etype.to_string(), m.spans[0].start, m.spans[0].end)).collect();
    v.sort();
    v
}

fn t(l: &str, a: usize, b: usize) -> (String, usize, usize) {
    (l.to_string(), a, b)
}

#[test]
fn gold_round_trip_with_repeated_surfaces() {
    let sentences = common::conll50();
    let policy = AlignmentPolicy::default();
    let mut hand = std::collections::BTreeMap::new();
    hand.insert(20, vec![t("LOC", 0, 0), t("LOC", 4, 4)]);
    hand.insert(25, vec![t("LOC", 0, 0), t("LOC", 7, 8), t("LOC", 10, 10), t("PER", 2, 3)]);
    for (i, s) in sentences.iter().enumerate() {
        let aligned = align_surface_to_spans(s, &gold_pairs(s), &policy);
        let flat = flatten(&aligned, &policy);
        let expected = hand.get(&i).cloned().unwrap_or_else(|| short(&s.gold_mentions()));
        assert_eq!(short(&flat.kept), expected, "sentence {i}");
    }
    let aligned = |i: usize| short(&align_surface_to_spans(&sentences[i], &gold_pairs(&sentences[i]), &policy));
    assert_eq!(
        aligned(19),
        [t("LOC", 8, 8), t("LOC", 30, 30), t("MISC", 22, 23), t("ORG", 8, 9), t("ORG", 12, 14), t("PER", 0, 1), t("PER", 4, 5)]
    );
    assert_eq!(aligned(20), [t("LOC", 0, 0), t("LOC", 4, 4), t("ORG", 0, 0), t("ORG", 4, 4)]);
    assert_eq!(aligned(21), [t("PER", 0, 0), t("PER", 2, 2)]);
    assert_eq!(aligned(33), [t("LOC", 5, 5), t("LOC", 7, 7)]);
    assert_eq!(aligned(45), [t("ORG", 0, 0), t("ORG", 2, 2), t("ORG", 2, 3)]);
    assert_eq!(aligned(49), [t("PER", 0, 1), t("PER", 1, 1), t("PER", 4, 4)]);
}

#[test]
fn gold_records_flatten_to_gold_tags() {
    let policy = AlignmentPolicy::default();
    for s in common::conll50() {
        let record = AnnotationRecord::gold(&s);
        let (tags, report) = record_to_tags(&s, &record, &policy).unwrap();
        assert_eq!(&tags, s.gold_tags.as_ref().unwrap());
        assert!(report.dropped.is_empty());
    }
}

#[test]
fn fixture_transcripts_flatten_cleanly() {
    let sentences = common::conll50();
    let labels = LabelSet::default();
    let post = PostProcess::default();
    for (s, tr) in sentences.iter().zip(common::transcripts50()) {
        let r = record_from_transcript(s, &tr.raw_text, Provenance::LlmCot, &labels, &post);
        let (tags, report) = record_to_tags(s, &r, &post.align).unwrap();
        assert_eq!(short(&tags_to_spans(&tags, &s.tokens)), short(&report.kept));
    }
}

fn sentence() -> Sentence {
    let text = "the Bank of Scotland met Bank staff in Scotland and the bank of scotland agreed";
    Sentence::new("p-0", Source::Other, text.split(' ').map(String::from).collect())
}

fn pair_pool() -> Vec<RawPair> {
    let surfaces = ["Bank of Scotland", "Scotland", "Bank", "bank of scotland", "of Scotland", "met Bank staff", "Narnia", "the"];
    let mut v = Vec::new();
    for l in ["PER", "LOC", "ORG", "MISC"] {
        for s in surfaces {
            v.push(RawPair::new(l, s));
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn alignment_is_order_independent_and_sound(
        picks in prop::collection::vec(0usize..32, 0..10),
        perm in any::<u64>(),
    ) {
        let s = sentence();
        let pool = pair_pool();
        let pairs: Vec<RawPair> = picks.iter().map(|&i| pool[i].clone()).collect();
        let mut shuffled = pairs.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (perm as usize).wrapping_mul(i + 7) % (i + 1));
        }
        let policy = AlignmentPolicy::default();
        let a = align_surface_to_spans(&s, &pairs, &policy);
        prop_assert_eq!(&a, &align_surface_to_spans(&s, &shuffled, &policy));
        for m in &a {
            let sp = m.spans[0];
            let text = s.tokens[sp.start..=sp.end].join(" ");
            prop_assert!(pairs.iter().any(|p| p.label == m.etype.as_str() && p.surface.to_lowercase() == text.to_lowercase()));
        }

        let f = flatten(&a, &policy);
        prop_assert_eq!(&f, &flatten(&align_surface_to_spans(&s, &shuffled, &policy), &policy));
        // Partition of the input.
        let mut all: Vec<EntityMention> = f.kept.clone();
        all.extend(f.dropped.iter().map(|(m, _)| m.clone()));
        prop_assert_eq!(short(&all), short(&a));
        // Kept mentions are pairwise disjoint.
        for (i, x) in f.kept.iter().enumerate() {
            for y in &f.kept[i + 1..] {
                prop_assert!(!x.spans[0].overlaps(&y.spans[0]));
            }
        }
        // Each drop is blocked by a kept mention of no lower priority.
        let rank = |l: &Label| policy.type_tiebreak.iter().position(|x| x == l).unwrap();
        for (d, _) in &f.dropped {
            let ds = d.spans[0];
            let blocked = f.kept.iter().any(|k| {
                let ks = k.spans[0];
                ks.overlaps(&ds)
                    && (ks.len() > ds.len()
                        || (ks.len() == ds.len() && (ks.start < ds.start || (ks.start == ds.start && rank(&k.etype) <= rank(&d.etype)))))
            });
            prop_assert!(blocked, "{:?} not blocked", d);
        }
    }
}
