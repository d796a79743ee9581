use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::BaselineModel;
use super::manifest::{compose_run, write_manifest_dir, AnnotationSource, CorpusStore, DatasetRef, EpochManifest, RunContext};
use super::HarnessError;
use crate::corpus::{parse_conll, tags_to_spans, write_conll, Sentence, Source};
use crate::jsonl::write_jsonl;
use crate::label::{Tag, TagScheme};
use crate::metrics::{aggregate, match_entities, EvalReport, MatchCounts};
use crate::schedule::{standard_family, LrSpec, ScheduleKind, ScheduleSpec};

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_BASE_LR: f64 = 1e-5;
pub const DEFAULT_DECAY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrMode {
    NoDecay,
    Decay,
}

impl LrMode {
    pub const BOTH: [LrMode; 2] = [LrMode::NoDecay, LrMode::Decay];

    pub fn spec(self) -> LrSpec {
        match self {
            LrMode::NoDecay => LrSpec::constant(DEFAULT_BASE_LR),
            LrMode::Decay => LrSpec::decaying(DEFAULT_BASE_LR, DEFAULT_DECAY),
        }
    }

    pub fn of(lr: &LrSpec) -> LrMode {
        if lr.has_decay() {
            LrMode::Decay
        } else {
            LrMode::NoDecay
        }
    }
}

impl fmt::Display for LrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrMode::NoDecay => "no LR decay",
            LrMode::Decay => "LR decay",
        })
    }
}

/// The labelled datasets the group presets are built from.
#[derive(Debug, Clone)]
pub struct GroupData {
    /// Gold-labelled CoNLL training sample.
    pub conll_original: DatasetRef,
    /// The same kind of sample labelled by the LLM.
    pub conll_distilled: DatasetRef,
    /// LLM-labelled BBC sentences.
    pub bbc_distilled: DatasetRef,
}

impl GroupData {
    pub fn distilled_all(&self) -> Result<DatasetRef, HarnessError> {
        DatasetRef::concat("distilled-conll+bbc", &self.conll_distilled, &self.bbc_distilled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupPreset {
    A,
    B,
    C,
    D,
    E,
}

impl GroupPreset {
    pub const ALL: [GroupPreset; 5] = [GroupPreset::A, GroupPreset::B, GroupPreset::C, GroupPreset::D, GroupPreset::E];

    pub fn kind(self) -> ScheduleKind {
        match self {
            GroupPreset::A => ScheduleKind::PureOriginal,
            GroupPreset::B | GroupPreset::C => ScheduleKind::PureDistilled,
            GroupPreset::D | GroupPreset::E => ScheduleKind::SimpleMix,
        }
    }

    /// `(distilled, original)` datasets for this group.
    pub fn datasets(self, data: &GroupData) -> Result<(DatasetRef, DatasetRef), HarnessError> {
        let none_d = || DatasetRef::empty("none", AnnotationSource::Llm);
        let none_o = || DatasetRef::empty("none", AnnotationSource::Gold);
        Ok(match self {
            GroupPreset::A => (none_d(), data.conll_original.clone()),
            GroupPreset::B => (data.conll_distilled.clone(), none_o()),
            GroupPreset::C => (data.distilled_all()?, none_o()),
            GroupPreset::D => (data.conll_distilled.clone(), data.conll_original.clone()),
            GroupPreset::E => (data.distilled_all()?, data.conll_original.clone()),
        })
    }

    pub fn plan(self, data: &GroupData, lr: LrMode) -> Result<ExperimentPlan, HarnessError> {
        let (distilled, original) = self.datasets(data)?;
        Ok(ExperimentPlan {
            label: self.to_string(),
            spec: ScheduleSpec::new(self.kind(), DEFAULT_EPOCHS),
            lr: lr.spec(),
            distilled,
            original,
        })
    }
}

impl fmt::Display for GroupPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for GroupPreset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(GroupPreset::A),
            "B" => Ok(GroupPreset::B),
            "C" => Ok(GroupPreset::C),
            "D" => Ok(GroupPreset::D),
            "E" => Ok(GroupPreset::E),
            _ => Err(HarnessError::Config(format!("unknown group `{s}`"))),
        }
    }
}

/// One strategy under one learning-rate setting, ready to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Column name in reports, e.g. `E` or `sigmoid(k=8)`.
    pub label: String,
    pub spec: ScheduleSpec,
    pub lr: LrSpec,
    pub distilled: DatasetRef,
    pub original: DatasetRef,
}

/// The phase-three strategies in report order.
pub fn blend_strategies(epochs: usize) -> Vec<ScheduleSpec> {
    let family = standard_family(epochs);
    let mut out = vec![ScheduleSpec::new(ScheduleKind::SimpleMix, epochs), ScheduleSpec::new(ScheduleKind::AllBlend, epochs)];
    out.extend(family.iter().filter(|s| matches!(s.kind, ScheduleKind::Sigmoid { .. })));
    out.extend(family.iter().filter(|s| matches!(s.kind, ScheduleKind::Power { .. })));
    out.push(ScheduleSpec::new(ScheduleKind::Cosine, epochs));
    out
}

/// Every group and every blending strategy under both learning-rate modes.
pub fn standard_grid(data: &GroupData) -> Result<Vec<ExperimentPlan>, HarnessError> {
    let mut plans = Vec::new();
    for g in GroupPreset::ALL {
        for lr in LrMode::BOTH {
            plans.push(g.plan(data, lr)?);
        }
    }
    let distilled = data.distilled_all()?;
    for spec in blend_strategies(DEFAULT_EPOCHS) {
        for lr in LrMode::BOTH {
            plans.push(ExperimentPlan {
                label: spec.kind.to_string(),
                spec,
                lr: lr.spec(),
                distilled: distilled.clone(),
                original: data.conll_original.clone(),
            });
        }
    }
    Ok(plans)
}

/// Everything a trainer needs for one run.
pub struct TrainJob<'a> {
    pub plan: &'a ExperimentPlan,
    pub manifests: &'a [EpochManifest],
    pub store: &'a CorpusStore,
    pub test: &'a [Sentence],
    pub seed: u64,
}

/// Trains on a run's manifests and tags the test sentences.
pub trait Trainer: Sync {
    fn name(&self) -> &str;
    fn train_predict(&self, job: &TrainJob<'_>) -> Result<Vec<Vec<Tag>>, HarnessError>;
}

pub struct BaselineTrainer;

impl Trainer for BaselineTrainer {
    fn name(&self) -> &str {
        "baseline"
    }

    fn train_predict(&self, job: &TrainJob<'_>) -> Result<Vec<Vec<Tag>>, HarnessError> {
        let model = BaselineModel::train(job.manifests, job.store, &job.plan.distilled, &job.plan.original)?;
        Ok(job.test.iter().map(|s| model.predict(&s.tokens)).collect())
    }
}

/// Returns the test set's own gold tags.
pub struct GoldEchoTrainer;

impl Trainer for GoldEchoTrainer {
    fn name(&self) -> &str {
        "gold-echo"
    }

    fn train_predict(&self, job: &TrainJob<'_>) -> Result<Vec<Vec<Tag>>, HarnessError> {
        job.test
            .iter()
            .map(|s| s.gold_tags.clone().ok_or_else(|| HarnessError::MissingTags { id: s.id.clone(), annotation: AnnotationSource::Gold }))
            .collect()
    }
}

/// Runs an external program per run.
///
/// Arguments may contain the placeholders `{run_dir}`, `{distilled}`,
/// `{original}`, `{test}` and `{predictions}`. The same paths are exported as
/// `NERDISTILL_RUN_DIR`, `NERDISTILL_DISTILLED`, `NERDISTILL_ORIGINAL`,
/// `NERDISTILL_TEST` and `NERDISTILL_PREDICTIONS`. Training sets are JSONL
/// sidecars whose `gold_tags` hold the labels to train on; the test set is
/// CoNLL with every tag `O`. The program must write IOB2 CoNLL predictions
/// for the test sentences, in order.
pub struct ExternalTrainer {
    pub program: String,
    pub args: Vec<String>,
    pub work_dir: PathBuf,
}

impl ExternalTrainer {
    fn write_split(path: &Path, ids: &[String], store: &CorpusStore, source: AnnotationSource) -> Result<(), HarnessError> {
        let mut sentences = Vec::with_capacity(ids.len());
        for id in ids {
            let mut s = store.sentence(id)?.clone();
            s.gold_tags = Some(store.tags(id, source)?.to_vec());
            s.columns.clear();
            sentences.push(s);
        }
        write_jsonl(&sentences, std::io::BufWriter::new(fs::File::create(path)?))?;
        Ok(())
    }
}

impl Trainer for ExternalTrainer {
    fn name(&self) -> &str {
        &self.program
    }

    fn train_predict(&self, job: &TrainJob<'_>) -> Result<Vec<Vec<Tag>>, HarnessError> {
        let plan = job.plan;
        let ctx = RunContext { spec: &plan.spec, lr: &plan.lr, distilled: &plan.distilled, original: &plan.original, seed: job.seed };
        let run_dir = write_manifest_dir(&self.work_dir, ctx, job.manifests)?;
        let distilled = run_dir.join("distilled.jsonl");
        let original = run_dir.join("original.jsonl");
        let test = run_dir.join("test.conll");
        let predictions = run_dir.join("predictions.conll");
        Self::write_split(&distilled, &plan.distilled.sentence_ids, job.store, plan.distilled.annotation_source)?;
        Self::write_split(&original, &plan.original.sentence_ids, job.store, plan.original.annotation_source)?;
        let blank: Vec<Sentence> = job
            .test
            .iter()
            .map(|s| {
                let mut b = s.clone();
                b.gold_tags = Some(vec![Tag::Outside; s.len()]);
                b.columns.clear();
                b
            })
            .collect();
        write_conll(&blank, TagScheme::Iob2, std::io::BufWriter::new(fs::File::create(&test)?))?;

        let paths = [
            ("{run_dir}", "NERDISTILL_RUN_DIR", &run_dir),
            ("{distilled}", "NERDISTILL_DISTILLED", &distilled),
            ("{original}", "NERDISTILL_ORIGINAL", &original),
            ("{test}", "NERDISTILL_TEST", &test),
            ("{predictions}", "NERDISTILL_PREDICTIONS", &predictions),
        ];
        let mut cmd = Command::new(&self.program);
        for arg in &self.args {
            let mut a = arg.clone();
            for (ph, _, p) in &paths {
                a = a.replace(ph, &p.to_string_lossy());
            }
            cmd.arg(a);
        }
        for (_, var, p) in &paths {
            cmd.env(var, p);
        }
        let out = cmd.output()?;
        if !out.status.success() {
            return Err(HarnessError::Trainer {
                status: out.status.to_string(),
                output: format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr)),
            });
        }
        let file = std::io::BufReader::new(fs::File::open(&predictions)?);
        let parsed = parse_conll(file, TagScheme::Iob2, Source::Other)?;
        Ok(parsed.into_iter().map(|s| s.gold_tags.unwrap_or_default()).collect())
    }
}

/// Scores predicted tag sequences against the test set's gold tags.
pub fn evaluate_predictions(test: &[Sentence], predictions: &[Vec<Tag>]) -> Result<EvalReport, HarnessError> {
    if test.len() != predictions.len() {
        return Err(HarnessError::PredictionCount { expected: test.len(), found: predictions.len() });
    }
    let mut counts = MatchCounts::default();
    for (s, pred) in test.iter().zip(predictions) {
        if pred.len() != s.len() {
            return Err(HarnessError::PredictionMismatch { id: s.id.clone(), expected: s.len(), found: pred.len() });
        }
        let gold = s.gold_mentions();
        counts = counts.merge(match_entities(&gold, &tags_to_spans(pred, &s.tokens)));
    }
    Ok(aggregate(&counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub run_seed: u64,
    pub strategy: ScheduleSpec,
    pub lr: LrSpec,
    pub report: EvalReport,
}

/// Composes, trains and scores one run per seed. Runs execute concurrently;
/// results follow `seeds` order.
pub fn run_experiment(
    plan: &ExperimentPlan,
    trainer: &dyn Trainer,
    store: &CorpusStore,
    test: &[Sentence],
    seeds: &[u64],
) -> Result<Vec<RunResult>, HarnessError> {
    store.check(&plan.distilled)?;
    store.check(&plan.original)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let manifests = compose_run(&plan.spec, &plan.distilled, &plan.original, &plan.lr, seed)?;
            let job = TrainJob { plan, manifests: &manifests, store, test, seed };
            let preds = trainer.train_predict(&job)?;
            Ok(RunResult {
                label: plan.label.clone(),
                run_seed: seed,
                strategy: plan.spec,
                lr: plan.lr,
                report: evaluate_predictions(test, &preds)?,
            })
        })
        .collect()
}

/// Composes every plan's manifests for every seed without training.
/// Returns the number of epoch manifests produced.
pub fn dry_run(plans: &[ExperimentPlan], seeds: &[u64], out_dir: Option<&Path>) -> Result<usize, HarnessError> {
    let mut total = 0;
    for (i, plan) in plans.iter().enumerate() {
        for &seed in seeds {
            let manifests = compose_run(&plan.spec, &plan.distilled, &plan.original, &plan.lr, seed)?;
            if let Some(root) = out_dir {
                let dir = root.join(format!("{i:02}-{}-{}", slug(&plan.label), slug(&LrMode::of(&plan.lr).to_string())));
                let ctx = RunContext { spec: &plan.spec, lr: &plan.lr, distilled: &plan.distilled, original: &plan.original, seed };
                write_manifest_dir(&dir, ctx, &manifests)?;
            }
            total += manifests.len();
        }
    }
    Ok(total)
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c.to_ascii_lowercase() } else { '-' }).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub label: String,
    pub strategy: ScheduleSpec,
    pub lr: LrSpec,
    pub runs: usize,
    /// Metric means; supports come from the test set and `counts` are summed over runs.
    pub mean: EvalReport,
    /// Keyed `<row>.<metric>`, e.g. `micro.f1`.
    pub dispersion: BTreeMap<String, Dispersion>,
}

pub fn aggregate_runs(results: &[RunResult]) -> Result<AggregateResult, HarnessError> {
    let first = results.first().ok_or(HarnessError::NoResults)?;
    if let Some(other) = results.iter().find(|r| r.strategy != first.strategy || r.lr != first.lr) {
        return Err(HarnessError::MixedStrategies {
            first: format!("{} / {}", first.strategy.kind, LrMode::of(&first.lr)),
            other: format!("{} / {}", other.strategy.kind, LrMode::of(&other.lr)),
        });
    }
    let mut mean = first.report.clone();
    let mut dispersion = BTreeMap::new();
    let n = results.len() as f64;
    for (row, metric, _) in first.report.scalars() {
        let values: Vec<f64> = results
            .iter()
            .map(|r| {
                r.report
                    .scalars()
                    .into_iter()
                    .find(|(rw, m, _)| *rw == row && *m == metric)
                    .map_or(0.0, |s| s.2)
            })
            .collect();
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mean.set_scalar(&row, metric, mu);
        dispersion.insert(format!("{row}.{metric}"), Dispersion { min, max, stddev: var.sqrt() });
    }
    mean.counts = results.iter().skip(1).fold(first.report.counts.clone(), |acc, r| acc.merge(r.report.counts.clone()));
    mean.zero_division = results.iter().any(|r| r.report.zero_division);
    Ok(AggregateResult {
        label: first.label.clone(),
        strategy: first.strategy,
        lr: first.lr,
        runs: results.len(),
        mean,
        dispersion,
    })
}
