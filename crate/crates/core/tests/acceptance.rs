//! Acceptance checks. Prints one line per criterion and exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use nerdistill::align::{align_surface_to_spans, flatten};
use nerdistill::annotate::client::{CacheMode, ResponseCache};
use nerdistill::annotate::output::RawPair;
use nerdistill::annotate::{record_from_transcript, Annotator, ClientConfig, PostProcess, Transcript};
use nerdistill::corpus::{conll_string, parse_conll, spans_to_tags, tags_to_spans, EntityMention};
use nerdistill::harness::{
    aggregate_runs, compose_run, emit_report, run_experiment, AnnotationSource, BaselineTrainer, CorpusStore,
    DatasetRef, ExperimentPlan, GoldEchoTrainer, GroupPreset, Layout, LrMode, GroupData,
};
use nerdistill::metrics::{match_entities, weighted_average, TypeScore};
use nerdistill::prompt::default_templates;
use nerdistill::schedule::{lr_at_epoch, SIGMOID_K, POWER_N};
use nerdistill::{AlignmentPolicy, AnnotationRecord, Label, LabelSet, LrSpec, Provenance, ScheduleKind, ScheduleSpec, Sentence, Source, TagScheme};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::*;

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    if ok {
        Pass(detail.into())
    } else {
        Fail(detail.into())
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let r = f();
    let took = start.elapsed();
    match r {
        Ok(d) if took < limit => Pass(format!("{d} in {took:.2?}")),
        Ok(d) => Fail(format!("{d}, but took {took:.2?} (limit {limit:?})")),
        Err(e) => Fail(e),
    }
}

fn schedules() -> Outcome {
    timed(Duration::from_secs(1), || {
        let tol = 1e-12;
        let mut kinds: Vec<ScheduleKind> = SIGMOID_K.iter().map(|&k| ScheduleKind::Sigmoid { k }).collect();
        kinds.extend(POWER_N.iter().map(|&n| ScheduleKind::Power { n }));
        kinds.extend([ScheduleKind::Cosine, ScheduleKind::SimpleMix, ScheduleKind::PureDistilled, ScheduleKind::PureOriginal, ScheduleKind::AllBlend]);
        for kind in &kinds {
            let spec = ScheduleSpec::new(*kind, 20);
            let mut prev = f64::INFINITY;
            for t in 0..20 {
                let (w0, w1) = spec.weights(t).map_err(|e| e.to_string())?;
                let x = t as f64 / 19.0;
                if !(0.0..=1.0).contains(&w0) || w0 > prev + tol {
                    return Err(format!("{kind}: w0({t}) = {w0}"));
                }
                let sum_ok = if *kind == ScheduleKind::AllBlend { (w0, w1) == (1.0, 1.0) } else { (w0 + w1 - 1.0).abs() <= tol };
                if !sum_ok {
                    return Err(format!("{kind}: weights at {t} are ({w0}, {w1})"));
                }
                let expected = match kind {
                    ScheduleKind::Sigmoid { k } => Some(1.0 / (1.0 + (k * (x - 0.5)).exp())),
                    ScheduleKind::Power { n } => Some(1.0 - x.powf(*n)),
                    ScheduleKind::Cosine => Some((1.0 + (std::f64::consts::PI * x).cos()) / 2.0),
                    _ => None,
                };
                if let Some(e) = expected {
                    if (w0 - e).abs() > tol {
                        return Err(format!("{kind}: w0({t}) = {w0}, expected {e}"));
                    }
                }
                prev = w0;
            }
            if matches!(kind, ScheduleKind::Cosine | ScheduleKind::Power { .. }) && (spec.w0(0) != Ok(1.0) || spec.w0(19) != Ok(0.0)) {
                return Err(format!("{kind}: boundary values not exact"));
            }
        }
        for &k in &SIGMOID_K {
            let w = ScheduleSpec::new(ScheduleKind::Sigmoid { k }, 21).w0(10).map_err(|e| e.to_string())?;
            if (w - 0.5).abs() > tol {
                return Err(format!("sigmoid k={k} midpoint is {w}"));
            }
        }
        Ok(format!("{} curves x 20 epochs", kinds.len()))
    })
}

/// Every mention over a sentence of `len` tokens.
fn all_mentions(len: usize) -> Vec<EntityMention> {
    let tokens: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
    let mut out = Vec::new();
    for l in ["PER", "LOC", "ORG", "MISC"] {
        for s in 0..len {
            for e in s..len {
                out.push(EntityMention::contiguous(Label::from(l), s, e, &tokens));
            }
        }
    }
    out
}

/// Every mention set of size 0, 1 and 2.
fn mention_sets(len: usize) -> Vec<Vec<EntityMention>> {
    let m = all_mentions(len);
    let mut out = vec![vec![]];
    for (i, a) in m.iter().enumerate() {
        out.push(vec![a.clone()]);
        for b in &m[i + 1..] {
            out.push(vec![a.clone(), b.clone()]);
        }
    }
    out
}

fn metric_oracle() -> Outcome {
    timed(Duration::from_secs(10), || {
        let mut cases = 0u64;
        for len in 1..=4 {
            let lists = mention_sets(len);
            for gold in &lists {
                for pred in &lists {
                    let counts = match_entities(gold, pred);
                    for l in LabelSet::default().iter() {
                        let g: Vec<&EntityMention> = gold.iter().filter(|m| &m.etype == l).collect();
                        let p: Vec<&EntityMention> = pred.iter().filter(|m| &m.etype == l).collect();
                        let tp = common::brute_force_matches(&g, &p) as u64;
                        let c = counts.per_type.get(l).copied().unwrap_or_default();
                        if (c.tp, c.fp, c.fn_, c.support) != (tp, p.len() as u64 - tp, g.len() as u64 - tp, g.len() as u64) {
                            return Err(format!("len {len}: {gold:?} vs {pred:?} gives {c:?} for {l}"));
                        }
                    }
                    cases += 1;
                }
            }
        }
        Ok(format!("{cases} gold/pred pairs agree"))
    })
}

fn table_weighted() -> Outcome {
    let table: serde_json::Value = serde_json::from_str(&common::fixture_text("table2.json")).unwrap();
    let supports: BTreeMap<String, u64> = serde_json::from_value(table["supports"].clone()).unwrap();
    let total: u64 = supports.values().sum();
    if total != table["total_support"].as_u64().unwrap() {
        return Fail(format!("supports sum to {total}"));
    }
    let columns = table["columns"].as_array().unwrap().len();
    let value = |row: &str, metric: &str, col: usize| table["rows"][row][metric][col].as_f64().unwrap();
    let mut worst: f64 = 0.0;
    for col in 0..columns {
        let scores: Vec<TypeScore> = supports
            .iter()
            .map(|(l, &support)| TypeScore {
                precision: value(l, "precision", col),
                recall: value(l, "recall", col),
                f1: value(l, "f1", col),
                support,
            })
            .collect();
        let w = weighted_average(&scores);
        for (metric, got) in [("f1", w.f1), ("precision", w.precision), ("recall", w.recall)] {
            worst = worst.max((got - value("weighted", metric, col)).abs());
        }
    }
    check(worst <= 0.001 + 1e-12, format!("{} columns x 3 metrics, max deviation {worst:.4}", columns))
}

fn conll_round_trip() -> Outcome {
    timed(Duration::from_secs(1), || {
        let text = common::fixture_text("conll50.iob1.txt");
        let first = parse_conll(text.as_bytes(), TagScheme::Iob1, Source::ConllTrain).map_err(|e| e.to_string())?;
        let written = conll_string(&first, TagScheme::Iob1).map_err(|e| e.to_string())?;
        let second = parse_conll(written.as_bytes(), TagScheme::Iob1, Source::ConllTrain).map_err(|e| e.to_string())?;
        if written != text {
            return Err("written text differs from the fixture".into());
        }
        let spans = |v: &[Sentence]| v.iter().map(|s| s.gold_mentions()).collect::<Vec<_>>();
        if spans(&first) != spans(&second) || first.len() != 50 {
            return Err("span multisets differ".into());
        }
        Ok("50 sentences, byte-identical".into())
    })
}

fn bijection() -> Outcome {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let labels = ["PER", "LOC", "ORG", "MISC"];
    for case in 0..1000 {
        let len = rng.random_range(1..40);
        let tokens: Vec<String> = (0..len).map(|i| format!("t{i}")).collect();
        let mut mentions = Vec::new();
        let mut pos = rng.random_range(0..3);
        while pos < len {
            let end = (pos + rng.random_range(0..4)).min(len - 1);
            mentions.push(EntityMention::contiguous(Label::from(labels[rng.random_range(0..4)]), pos, end, &tokens));
            pos = end + 1 + rng.random_range(0..4);
        }
        let back = spans_to_tags(&mentions, len).map(|t| tags_to_spans(&t, &tokens));
        if back.as_ref().ok() != Some(&mentions) {
            return Fail(format!("case {case}: {mentions:?} came back as {back:?}"));
        }
    }
    Pass("1000 random flat mention sets".into())
}

fn alignment_round_trip() -> Outcome {
    let sentences = common::conll50();
    let policy = AlignmentPolicy::default();
    let t = |l: &str, a: usize, b: usize| (l.to_string(), a, b);
    let hand: HashMap<usize, Vec<(String, usize, usize)>> = HashMap::from([
        (19, vec![t("LOC", 30, 30), t("MISC", 22, 23), t("ORG", 8, 9), t("ORG", 12, 14), t("PER", 0, 1), t("PER", 4, 5)]),
        (20, vec![t("LOC", 0, 0), t("LOC", 4, 4)]),
        (21, vec![t("PER", 0, 0), t("PER", 2, 2)]),
        (25, vec![t("LOC", 0, 0), t("LOC", 7, 8), t("LOC", 10, 10), t("PER", 2, 3)]),
        (33, vec![t("LOC", 5, 5), t("LOC", 7, 7)]),
        (45, vec![t("ORG", 0, 0), t("ORG", 2, 3)]),
        (49, vec![t("PER", 0, 1), t("PER", 4, 4)]),
    ]);
    let (mut unique, mut repeated) = (0, 0);
    for (i, s) in sentences.iter().enumerate() {
        let gold = s.gold_mentions();
        let pairs: Vec<RawPair> = gold.iter().map(|m| RawPair::new(m.etype.as_str(), m.surfaces[0].clone())).collect();
        let mut got: Vec<_> = flatten(&align_surface_to_spans(s, &pairs, &policy), &policy)
            .kept
            .iter()
            .map(|m| (m.etype.to_string(), m.spans[0].start, m.spans[0].end))
            .collect();
        got.sort();
        let occurrences = |m: &EntityMention| {
            let w: Vec<&str> = m.surfaces[0].split(' ').collect();
            s.tokens.windows(w.len()).filter(|x| *x == w.as_slice()).count()
        };
        let is_unique = gold.iter().all(|m| occurrences(m) == 1)
            && gold.iter().all(|a| gold.iter().filter(|b| b.surfaces == a.surfaces).count() == 1);
        let expected = if is_unique {
            unique += 1;
            let mut v: Vec<_> = gold.iter().map(|m| (m.etype.to_string(), m.spans[0].start, m.spans[0].end)).collect();
            v.sort();
            v
        } else {
            repeated += 1;
            match hand.get(&i) {
                Some(v) => v.clone(),
                None => return Fail(format!("sentence {i} repeats a surface but has no hand expectation")),
            }
        };
        if got != expected {
            return Fail(format!("sentence {i}: got {got:?}, expected {expected:?}"));
        }
    }
    check(repeated == hand.len(), format!("{unique} unique-surface sentences exact, {repeated} repeated-surface sentences as listed"))
}

fn ids(p: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{p}-{i:05}")).collect()
}

fn group_manifests() -> Outcome {
    let data = GroupData {
        conll_original: DatasetRef::new("original-conll", ids("conll-train", 120), AnnotationSource::Gold),
        conll_distilled: DatasetRef::new("distilled-conll", ids("conll-train", 120), AnnotationSource::Llm),
        bbc_distilled: DatasetRef::new("distilled-bbc", ids("bbc", 80), AnnotationSource::Llm),
    };
    let mut problems = Vec::new();
    for g in GroupPreset::ALL {
        for lr in LrMode::BOTH {
            let p = g.plan(&data, lr).unwrap();
            let a = compose_run(&p.spec, &p.distilled, &p.original, &p.lr, 42).unwrap();
            let b = compose_run(&p.spec, &p.distilled, &p.original, &p.lr, 42).unwrap();
            if a != b || a.len() != 20 {
                problems.push(format!("{g} {lr}: not deterministic"));
            }
            for m in &a {
                let (dn, on) = (m.distilled_ids.len(), m.original_ids.len());
                let (ed, eo) = match g {
                    GroupPreset::A => (0, 120),
                    GroupPreset::B => (120, 0),
                    GroupPreset::C => (200, 0),
                    GroupPreset::D if m.epoch < 10 => (120, 0),
                    GroupPreset::D => (0, 120),
                    GroupPreset::E if m.epoch < 10 => (200, 0),
                    GroupPreset::E => (0, 120),
                };
                let full = (dn == 0 || m.distilled_ids == p.distilled.sentence_ids) && (on == 0 || m.original_ids == p.original.sentence_ids);
                if (dn, on) != (ed, eo) || !full {
                    problems.push(format!("{g} {lr} epoch {}: {dn}+{on}", m.epoch));
                }
            }
            let expected_kind = match g {
                GroupPreset::A => ScheduleKind::PureOriginal,
                GroupPreset::B | GroupPreset::C => ScheduleKind::PureDistilled,
                _ => ScheduleKind::SimpleMix,
            };
            if p.spec.kind != expected_kind {
                problems.push(format!("{g}: kind {}", p.spec.kind));
            }
        }
    }
    check(problems.is_empty(), if problems.is_empty() { "groups A-E x 2 LR modes".to_string() } else { problems.join("; ") })
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

fn lr_schedule() -> Outcome {
    let decay = LrSpec::decaying(1e-5, 0.95);
    let got: Vec<f64> = (0..3).map(|t| lr_at_epoch(&decay, t)).collect();
    let ok_decay = got.iter().zip([1e-5, 9.5e-6, 9.025e-6]).all(|(g, e)| ulps(*g, e) <= 1);
    let constant = LrSpec::decaying(1e-5, 1.0);
    let ok_const = (0..20).all(|t| lr_at_epoch(&constant, t) == 1e-5);
    check(ok_decay && ok_const, format!("decay {got:?}, constant over 20 epochs: {ok_const}"))
}

fn smoke_once(cache_dir: &std::path::Path, mode: CacheMode) -> Result<(String, String), String> {
    let sentences = common::conll50();
    let server = common::TranscriptServer::new(&common::transcripts50());
    let (_, cot) = default_templates();
    let labels = LabelSet::default();
    let config = ClientConfig::default();
    let cache = ResponseCache::new(cache_dir, mode);
    let post = PostProcess::default();
    let ann = Annotator { template: &cot, labels: &labels, config: &config, transport: &server, cache: &cache, post: post.clone() };
    let records: Vec<AnnotationRecord> = ann
        .annotate_all(&sentences[..25])
        .map_err(|e| e.to_string())?
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut store = CorpusStore::new();
    store.insert_sentences(sentences[..40].iter().cloned());
    store.insert_records(&records, &post.align).map_err(|e| e.to_string())?;
    let take = |r: std::ops::Range<usize>| sentences[r].iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    let plan = ExperimentPlan {
        label: "simple_mix".into(),
        spec: ScheduleSpec::new(ScheduleKind::SimpleMix, 20),
        lr: LrMode::Decay.spec(),
        distilled: DatasetRef::new("distilled-conll", take(0..25), AnnotationSource::Llm),
        original: DatasetRef::new("original-conll", take(25..40), AnnotationSource::Gold),
    };
    let test = &sentences[40..];
    let seeds = [1, 2, 3, 4, 5];
    let runs = run_experiment(&plan, &BaselineTrainer, &store, test, &seeds).map_err(|e| e.to_string())?;
    let agg = aggregate_runs(&runs).map_err(|e| e.to_string())?;
    let report = emit_report(&[agg], Layout::Phase3);

    let echo = run_experiment(&plan, &GoldEchoTrainer, &store, test, &seeds).map_err(|e| e.to_string())?;
    let echo = aggregate_runs(&echo).map_err(|e| e.to_string())?;
    if let Some((row, metric, v)) = echo.mean.scalars().into_iter().find(|s| s.2 != 1.0) {
        return Err(format!("gold echo {row}.{metric} = {v}"));
    }
    let mut records_json = Vec::new();
    nerdistill::jsonl::write_jsonl(&records, &mut records_json).map_err(|e| e.to_string())?;
    Ok((String::from_utf8(records_json).unwrap(), report.to_json()))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    timed(Duration::from_secs(30), || {
        let live = smoke_once(dir.path(), CacheMode::ReadWrite)?;
        let replay = smoke_once(dir.path(), CacheMode::CacheOnly)?;
        if live != replay {
            return Err("cached replay differs from the first run".into());
        }
        Ok("5 seeds, replay identical, gold echo 1.0".into())
    })
}

fn released_files() -> Outcome {
    let vars = ["NERDISTILL_RELEASED_GOLD", "NERDISTILL_RELEASED_STANDARD", "NERDISTILL_RELEASED_COT"];
    let Ok(paths) = vars.iter().map(std::env::var).collect::<Result<Vec<_>, _>>() else {
        return Skip(format!("set {} to run", vars.join(", ")));
    };
    let gold_file = std::io::BufReader::new(std::fs::File::open(&paths[0]).unwrap());
    let gold = parse_conll(gold_file, TagScheme::Iob1, Source::ConllTrain).unwrap();
    let by_text: HashMap<String, &Sentence> = gold.iter().map(|s| (s.tokens.join(" "), s)).collect();
    let post = PostProcess::default();
    let labels = LabelSet::default();
    let score = |path: &str, prov: Provenance| {
        let transcripts: Vec<Transcript> = nerdistill::jsonl::read_jsonl(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
        let mut g = Vec::new();
        let mut p = Vec::new();
        for t in &transcripts {
            if let Some(s) = by_text.get(&t.tokens.join(" ")) {
                g.push(AnnotationRecord::gold(s));
                p.push(record_from_transcript(s, &t.raw_text, prov, &labels, &post));
            }
        }
        nerdistill::metrics::evaluate_annotations(&g, &p, &post.align).unwrap().micro.f1
    };
    let standard = score(&paths[1], Provenance::LlmStandard);
    let cot = score(&paths[2], Provenance::LlmCot);
    check((standard - 0.65).abs() <= 0.01 && (cot - 0.73).abs() <= 0.01, format!("standard {standard:.3}, cot {cot:.3}"))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("schedule closed forms", schedules()),
        ("metric oracle equivalence", metric_oracle()),
        ("weighted-average consistency", table_weighted()),
        ("CoNLL round trip", conll_round_trip()),
        ("span/tag bijection", bijection()),
        ("alignment gold round trip", alignment_round_trip()),
        ("group-preset manifests", group_manifests()),
        ("LR schedule", lr_schedule()),
        ("end-to-end smoke", end_to_end()),
        ("released annotation files", released_files()),
    ];
    let structural = matches!(results[2].1, Pass(_)) && matches!(results[6].1, Pass(_));
    results.push((
        "protocol reproduction (structural)",
        check(structural, "absolute fine-tuning scores are out of reach offline; covered by criteria 3 and 7"),
    ));

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
