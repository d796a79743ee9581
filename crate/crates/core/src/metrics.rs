//! Entity-level precision, recall and F1 under exact (type, spans) matching.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{flatten, AlignmentPolicy};
use crate::annotate::AnnotationRecord;
use crate::corpus::{EntityMention, Span};
use crate::label::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Gold mentions of this type; always `tp + fn_`.
    pub support: u64,
}

impl TypeCounts {
    fn add(&mut self, other: &TypeCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.support += other.support;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub per_type: BTreeMap<Label, TypeCounts>,
}

impl MatchCounts {
    pub fn merge(mut self, other: MatchCounts) -> MatchCounts {
        for (label, c) in other.per_type {
            self.per_type.entry(label).or_default().add(&c);
        }
        self
    }

    pub fn totals(&self) -> TypeCounts {
        let mut t = TypeCounts::default();
        for c in self.per_type.values() {
            t.add(c);
        }
        t
    }

    fn entry(&mut self, label: &Label) -> &mut TypeCounts {
        self.per_type.entry(label.clone()).or_default()
    }
}

/// Counts one-to-one exact matches between a gold and a predicted mention set.
pub fn match_entities(gold: &[EntityMention], pred: &[EntityMention]) -> MatchCounts {
    let mut unmatched: HashMap<(&Label, &[Span]), usize> = HashMap::new();
    let mut counts = MatchCounts::default();
    for g in gold {
        *unmatched.entry((&g.etype, g.spans.as_slice())).or_default() += 1;
        counts.entry(&g.etype).support += 1;
    }
    for p in pred {
        let c = counts.entry(&p.etype);
        match unmatched.get_mut(&(&p.etype, p.spans.as_slice())) {
            Some(n) if *n > 0 => {
                *n -= 1;
                c.tp += 1;
            }
            _ => c.fp += 1,
        }
    }
    for ((label, _), n) in unmatched {
        counts.entry(label).fn_ += n as u64;
    }
    counts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub fn from_pr(precision: f64, recall: f64) -> Score {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Score { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl TypeScore {
    pub fn score(&self) -> Score {
        Score { precision: self.precision, recall: self.recall, f1: self.f1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: BTreeMap<Label, TypeScore>,
    pub micro: Score,
    #[serde(rename = "macro")]
    pub macro_avg: Score,
    pub weighted: Score,
    pub total_support: u64,
    pub counts: MatchCounts,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
    /// Predicted mentions with more than one span, before flattening.
    pub discontinuous: usize,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Support-weighted mean of per-type scores; all zeros if total support is 0.
pub fn weighted_average<'a>(scores: impl IntoIterator<Item = &'a TypeScore>) -> Score {
    let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0u64);
    for s in scores {
        let w = s.support as f64;
        p += w * s.precision;
        r += w * s.recall;
        f += w * s.f1;
        n += s.support;
    }
    if n == 0 {
        return Score::default();
    }
    let n = n as f64;
    Score { precision: p / n, recall: r / n, f1: f / n }
}

pub fn aggregate(counts: &MatchCounts) -> EvalReport {
    let mut zero = false;
    let mut per_type = BTreeMap::new();
    for (label, c) in &counts.per_type {
        let p = ratio(c.tp, c.tp + c.fp, &mut zero);
        let r = ratio(c.tp, c.tp + c.fn_, &mut zero);
        let s = Score::from_pr(p, r);
        per_type.insert(label.clone(), TypeScore { precision: s.precision, recall: s.recall, f1: s.f1, support: c.support });
    }
    let t = counts.totals();
    let micro = Score::from_pr(ratio(t.tp, t.tp + t.fp, &mut zero), ratio(t.tp, t.tp + t.fn_, &mut zero));
    let k = per_type.len();
    let macro_avg = if k == 0 {
        zero = true;
        Score::default()
    } else {
        let mean = |f: fn(&TypeScore) -> f64| per_type.values().map(f).sum::<f64>() / k as f64;
        Score { precision: mean(|s| s.precision), recall: mean(|s| s.recall), f1: mean(|s| s.f1) }
    };
    if t.support == 0 {
        zero = true;
    }
    let weighted = weighted_average(per_type.values());
    EvalReport {
        per_type,
        micro,
        macro_avg,
        weighted,
        total_support: t.support,
        counts: counts.clone(),
        zero_division: zero,
        discontinuous: 0,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("predicted sentence {0} has no gold record")]
    UnknownSentence(String),
    #[error("sentence {0} has more than one predicted record")]
    DuplicatePrediction(String),
}

/// Scores predicted records against gold, joined on sentence id. Both sides
/// are flattened first; gold sentences without a prediction count as misses.
pub fn evaluate_annotations(
    gold: &[AnnotationRecord],
    pred: &[AnnotationRecord],
    policy: &AlignmentPolicy,
) -> Result<EvalReport, MetricsError> {
    let gold_ids: HashSet<&str> = gold.iter().map(|r| r.sentence_id.as_str()).collect();
    let mut by_id: HashMap<&str, &AnnotationRecord> = HashMap::with_capacity(pred.len());
    for r in pred {
        if !gold_ids.contains(r.sentence_id.as_str()) {
            return Err(MetricsError::UnknownSentence(r.sentence_id.clone()));
        }
        if by_id.insert(&r.sentence_id, r).is_some() {
            return Err(MetricsError::DuplicatePrediction(r.sentence_id.clone()));
        }
    }
    let (counts, discontinuous) = gold
        .par_iter()
        .map(|g| {
            let gold_flat = flatten(&g.entities, policy).kept;
            match by_id.get(g.sentence_id.as_str()) {
                Some(p) => {
                    let disc = p.entities.iter().filter(|m| !m.is_contiguous()).count();
                    (match_entities(&gold_flat, &flatten(&p.entities, policy).kept), disc)
                }
                None => (match_entities(&gold_flat, &[]), 0),
            }
        })
        .reduce(|| (MatchCounts::default(), 0), |(a, da), (b, db)| (a.merge(b), da + db));
    let mut report = aggregate(&counts);
    report.discontinuous = discontinuous;
    Ok(report)
}

const METRICS: [&str; 3] = ["precision", "recall", "f1"];

impl EvalReport {
    /// Every scalar metric as `(row, metric, value)`, rows in table order:
    /// `micro`, `macro`, `weighted`, then each label.
    pub fn scalars(&self) -> Vec<(String, &'static str, f64)> {
        let mut out = Vec::new();
        let mut push = |row: &str, s: Score| {
            for (m, v) in METRICS.iter().zip([s.precision, s.recall, s.f1]) {
                out.push((row.to_string(), *m, v));
            }
        };
        push("micro", self.micro);
        push("macro", self.macro_avg);
        push("weighted", self.weighted);
        for (l, s) in &self.per_type {
            push(l.as_str(), s.score());
        }
        out
    }

    /// Overwrites one scalar named as in [`EvalReport::scalars`].
    pub fn set_scalar(&mut self, row: &str, metric: &str, value: f64) -> bool {
        let slot = match row {
            "micro" => &mut self.micro,
            "macro" => &mut self.macro_avg,
            "weighted" => &mut self.weighted,
            label => {
                let Some(ts) = self.per_type.get_mut(label) else { return false };
                return match metric {
                    "precision" => { ts.precision = value; true }
                    "recall" => { ts.recall = value; true }
                    "f1" => { ts.f1 = value; true }
                    _ => false,
                };
            }
        };
        match metric {
            "precision" => slot.precision = value,
            "recall" => slot.recall = value,
            "f1" => slot.f1 = value,
            _ => return false,
        }
        true
    }

    fn support_of(&self, row: &str) -> u64 {
        match row {
            "micro" | "macro" | "weighted" => self.total_support,
            l => self.per_type.get(l).map_or(0, |s| s.support),
        }
    }

    fn rows(&self) -> Vec<(String, Score)> {
        let mut rows = vec![
            ("micro".to_string(), self.micro),
            ("macro".to_string(), self.macro_avg),
            ("weighted".to_string(), self.weighted),
        ];
        rows.extend(self.per_type.iter().map(|(l, s)| (l.to_string(), s.score())));
        rows
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "precision", "recall", "f1", "support"]).unwrap();
        for (row, s) in self.rows() {
            let support = self.support_of(&row).to_string();
            w.write_record([row, s.precision.to_string(), s.recall.to_string(), s.f1.to_string(), support])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| | precision | recall | f1 | support |\n|---|---|---|---|---|\n");
        for (row, s) in self.rows() {
            writeln!(
                out,
                "| {row} | {:.3} | {:.3} | {:.3} | {} |",
                s.precision,
                s.recall,
                s.f1,
                self.support_of(&row)
            )
            .unwrap();
        }
        out
    }
}
