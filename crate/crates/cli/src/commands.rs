use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nerdistill::align::{record_to_tags, AlignedRecord};
use nerdistill::annotate::client::{CacheMode, HttpTransport, ResponseCache};
use nerdistill::annotate::{record_from_transcript, Annotator, RecordStatus, Transcript};
use nerdistill::corpus::{filter_by_length, parse_conll, sample_excluding, write_conll, ConllReader};
use nerdistill::harness::runner::{DEFAULT_EPOCHS, DEFAULT_ITERATIONS};
use nerdistill::harness::{
    aggregate_runs, compose_run, dry_run, emit_report, evaluate_predictions, standard_grid, run_experiment,
    write_manifest_dir, AggregateResult, AnnotationSource, BaselineTrainer, CorpusStore, DatasetRef, ExperimentPlan,
    ExternalTrainer, GoldEchoTrainer, LrMode, GroupData, RunContext, RunResult, Trainer,
};
use nerdistill::jsonl::{read_jsonl, write_jsonl};
use nerdistill::metrics::evaluate_annotations;
use nerdistill::prompt::{default_templates, PromptMode, PromptTemplate};
use nerdistill::schedule::{emit_curves, render_svg, write_curves_csv};
use nerdistill::{AnnotationRecord, EvalReport, Provenance, ScheduleKind, ScheduleSpec, Sentence, Source, TagScheme};
use serde::{Deserialize, Serialize};

use crate::config::{Config, TrainerConfig};
use crate::{
    AlignArgs, AnnotateArgs, ComposeArgs, DataArgs, EvaluateArgs, KindArgs, LrChoice, OutputArgs, PlanArgs,
    ReportArgs, RunArgs, SampleArgs, ScheduleArgs, TrainerChoice,
};

pub const DEFAULT_SEED: u64 = 42;

pub struct Ctx {
    pub seed: u64,
    pub config: Config,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_jsonl(items, create(path)?).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    create(path)?.write_all(text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// A `.jsonl` sidecar, or CoNLL text with ids generated from `source`.
fn read_sentences(path: &Path, scheme: TagScheme, source: Source) -> Result<Vec<Sentence>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return read_jsonl_file(path);
    }
    parse_conll(open(path)?, scheme, source).with_context(|| format!("reading {}", path.display()))
}

pub fn sample(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    let scheme = a.scheme.or(ctx.config.scheme).unwrap_or(TagScheme::Iob1);
    let parsed = ConllReader::new(scheme, a.source)
        .with_labels(ctx.config.labels())
        .read(open(&a.input)?)
        .with_context(|| format!("reading {}", a.input.display()))?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    let pool = filter_by_length(&parsed.sentences, a.min_tokens);
    let exclude: HashSet<String> = match &a.exclude {
        Some(p) => read_jsonl_file::<Sentence>(p)?.into_iter().map(|s| s.id).collect(),
        None => HashSet::new(),
    };
    let chosen = match a.n {
        Some(n) => sample_excluding(&pool, n, ctx.seed, &exclude)?,
        None => pool.into_iter().filter(|s| !exclude.contains(&s.id)).collect(),
    };
    write_jsonl_file(&a.out, &chosen)?;
    if let Some(p) = &a.conll_out {
        write_conll(&chosen, scheme, create(p)?)?;
    }
    println!("sampled {} of {} sentences", chosen.len(), parsed.sentences.len());
    Ok(())
}

fn load_template(ctx: &Ctx, a: &AnnotateArgs) -> Result<PromptTemplate> {
    let mode = a.mode.or(ctx.config.mode);
    match a.template.as_ref().or(ctx.config.template.as_ref()) {
        Some(p) => {
            let t = PromptTemplate::from_json_file(p).with_context(|| format!("loading template {}", p.display()))?;
            if let Some(m) = mode.filter(|m| *m != t.mode) {
                bail!("template {} is a {} template but --mode {m} was requested", p.display(), t.mode);
            }
            Ok(t)
        }
        None => {
            let (standard, cot) = default_templates();
            Ok(if mode == Some(PromptMode::Cot) { cot } else { standard })
        }
    }
}

pub fn annotate(ctx: &Ctx, a: AnnotateArgs) -> Result<()> {
    let cfg = &ctx.config;
    let sentences: Vec<Sentence> = read_jsonl_file(&a.input)?;
    let labels = cfg.labels();
    let template = load_template(ctx, &a)?;
    template.validate(&labels)?;
    let mut failed = 0usize;
    let records: Vec<AnnotationRecord> = match &a.transcripts {
        Some(path) => {
            let transcripts: Vec<Transcript> = read_jsonl_file(path)?;
            let by_id: HashMap<&str, &Transcript> = transcripts.iter().map(|t| (t.sentence_id.as_str(), t)).collect();
            let provenance = Provenance::from(template.mode);
            sentences
                .iter()
                .map(|s| {
                    let t = by_id.get(s.id.as_str()).ok_or_else(|| anyhow!("no transcript for {}", s.id))?;
                    Ok(record_from_transcript(s, &t.raw_text, provenance, &labels, &cfg.post))
                })
                .collect::<Result<_>>()?
        }
        None => {
            let mode = if a.cache_only { CacheMode::CacheOnly } else { cfg.cache_mode.unwrap_or_default() };
            let cache = match (a.cache_dir.as_ref().or(cfg.cache_dir.as_ref()), mode) {
                (_, CacheMode::Disabled) => ResponseCache::disabled(),
                (Some(dir), mode) => ResponseCache::new(dir, mode),
                (None, CacheMode::CacheOnly) => bail!("--cache-only needs --cache-dir"),
                (None, _) => ResponseCache::disabled(),
            };
            let transport = HttpTransport::new(cfg.endpoint.clone());
            let annotator = Annotator {
                template: &template,
                labels: &labels,
                config: &cfg.client,
                transport: &transport,
                cache: &cache,
                post: cfg.post.clone(),
            };
            let mut ok = Vec::with_capacity(sentences.len());
            for r in annotator.annotate_all(&sentences)? {
                match r {
                    Ok(rec) => ok.push(rec),
                    Err(e) => {
                        eprintln!("error: {e}");
                        failed += 1;
                    }
                }
            }
            ok
        }
    };
    write_jsonl_file(&a.out, &records)?;
    if let Some(p) = &a.transcripts_out {
        let by_id: HashMap<&str, &Sentence> = sentences.iter().map(|s| (s.id.as_str(), s)).collect();
        let transcripts: Vec<Transcript> = records.iter().map(|r| Transcript::of(r, by_id[r.sentence_id.as_str()])).collect();
        write_jsonl_file(p, &transcripts)?;
    }
    let count = |st: RecordStatus| records.iter().filter(|r| r.status == st).count();
    println!(
        "{} records: {} ok, {} repaired, {} rejected",
        records.len(),
        count(RecordStatus::Ok),
        count(RecordStatus::Repaired),
        count(RecordStatus::Rejected)
    );
    if failed > 0 {
        bail!("{failed} sentences could not be annotated");
    }
    Ok(())
}

pub fn align(ctx: &Ctx, a: AlignArgs) -> Result<()> {
    let sentences: Vec<Sentence> = read_jsonl_file(&a.input)?;
    let by_id: HashMap<&str, &Sentence> = sentences.iter().map(|s| (s.id.as_str(), s)).collect();
    let records: Vec<AnnotationRecord> = read_jsonl_file(&a.records)?;
    let mut aligned = Vec::with_capacity(records.len());
    let mut tagged = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in &records {
        let s = by_id.get(r.sentence_id.as_str()).ok_or_else(|| anyhow!("record for unknown sentence {}", r.sentence_id))?;
        let (tags, report) = record_to_tags(s, r, &ctx.config.post.align)?;
        dropped += report.dropped.len();
        aligned.push(AlignedRecord::new(r, &report));
        let mut t = (*s).clone();
        t.gold_tags = Some(tags);
        tagged.push(t);
    }
    write_jsonl_file(&a.out, &aligned)?;
    if let Some(p) = &a.sidecar_out {
        write_jsonl_file(p, &tagged)?;
    }
    if let Some(p) = &a.conll_out {
        write_conll(&tagged, TagScheme::Iob2, create(p)?)?;
    }
    println!("aligned {} records, {dropped} overlapping mentions dropped", aligned.len());
    Ok(())
}

fn write_outputs(o: &OutputArgs, json: String, csv: String, md: String) -> Result<()> {
    if let Some(p) = &o.json {
        write_text(p, &json)?;
    }
    if let Some(p) = &o.csv {
        write_text(p, &csv)?;
    }
    if let Some(p) = &o.md {
        write_text(p, &md)?;
    }
    if o.json.is_none() && o.csv.is_none() && o.md.is_none() {
        print!("{md}");
    }
    Ok(())
}

pub fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let scheme = a.scheme.or(ctx.config.scheme).unwrap_or(TagScheme::Iob1);
    let gold = read_sentences(&a.gold, scheme, Source::ConllTest)?;
    let report: EvalReport = match (&a.pred, &a.pred_conll) {
        (Some(p), _) => {
            let pred: Vec<AnnotationRecord> = read_jsonl_file(p)?;
            let gold_records: Vec<AnnotationRecord> = gold.iter().map(AnnotationRecord::gold).collect();
            evaluate_annotations(&gold_records, &pred, &ctx.config.post.align)?
        }
        (None, Some(p)) => {
            let pred = parse_conll(open(p)?, TagScheme::Iob2, Source::Other)?;
            let tags: Vec<_> = pred.into_iter().map(|s| s.gold_tags.unwrap_or_default()).collect();
            evaluate_predictions(&gold, &tags)?
        }
        (None, None) => bail!("one of --pred or --pred-conll is required"),
    };
    if report.zero_division {
        log::warn!("some ratios had a zero denominator and were reported as 0");
    }
    write_outputs(&a.outputs, report.to_json(), report.to_csv(), report.to_markdown())?;
    if a.outputs.json.is_some() || a.outputs.csv.is_some() || a.outputs.md.is_some() {
        println!("micro F1 {:.4}", report.micro.f1);
    }
    Ok(())
}

fn kind_of(k: &KindArgs) -> Result<Option<ScheduleKind>> {
    k.kind.as_deref().map(|name| ScheduleKind::from_parts(name, k.k, k.n)).transpose().map_err(Into::into)
}

fn epochs(ctx: &Ctx, k: &KindArgs) -> usize {
    k.epochs.or(ctx.config.epochs).unwrap_or(DEFAULT_EPOCHS)
}

pub fn schedule(ctx: &Ctx, a: ScheduleArgs) -> Result<()> {
    let t = epochs(ctx, &a.kind);
    let specs = if a.family {
        nerdistill::harness::runner::blend_strategies(t)
    } else {
        let kind = kind_of(&a.kind)?.ok_or_else(|| anyhow!("--kind or --family is required"))?;
        vec![ScheduleSpec::new(kind, t)]
    };
    let rows = emit_curves(&specs)?;
    write_curves_csv(&rows, create(&a.out)?)?;
    if let Some(p) = &a.svg {
        write_text(p, &render_svg(&rows))?;
    }
    println!("wrote {} rows for {} curves", rows.len(), specs.len());
    Ok(())
}

struct Loaded {
    plans: Vec<ExperimentPlan>,
    store: CorpusStore,
}

fn load_split(store: &mut CorpusStore, path: Option<&Path>, name: &str, source: AnnotationSource) -> Result<DatasetRef> {
    let Some(path) = path else {
        return Ok(DatasetRef::empty(name, source));
    };
    let sentences: Vec<Sentence> = read_jsonl_file(path)?;
    let ids = sentences.iter().map(|s| s.id.clone()).collect();
    match source {
        AnnotationSource::Gold => store.insert_sentences(sentences),
        AnnotationSource::Llm => {
            for mut s in sentences {
                let tags = s.gold_tags.take().ok_or_else(|| anyhow!("{}: sentence {} has no tags", path.display(), s.id))?;
                let id = s.id.clone();
                store.insert_sentences([s]);
                store.insert_llm_tags(&id, tags)?;
            }
        }
    }
    Ok(DatasetRef::new(name, ids, source))
}

fn lr_modes(choice: Option<LrChoice>, default: LrChoice) -> Vec<LrMode> {
    match choice.unwrap_or(default) {
        LrChoice::NoDecay => vec![LrMode::NoDecay],
        LrChoice::Decay => vec![LrMode::Decay],
        LrChoice::Both => LrMode::BOTH.to_vec(),
    }
}

fn load_plans(ctx: &Ctx, p: &PlanArgs) -> Result<Loaded> {
    let DataArgs { distilled, extra_distilled, original } = &p.data;
    let mut store = CorpusStore::new();
    // Gold sentences go in last so a shared id keeps its gold tags.
    let data = GroupData {
        conll_distilled: load_split(&mut store, distilled.as_deref(), "distilled", AnnotationSource::Llm)?,
        bbc_distilled: load_split(&mut store, extra_distilled.as_deref(), "extra-distilled", AnnotationSource::Llm)?,
        conll_original: load_split(&mut store, original.as_deref(), "original", AnnotationSource::Gold)?,
    };
    let mut plans = Vec::new();
    if p.grid {
        let modes = lr_modes(p.lr, LrChoice::Both);
        plans = standard_grid(&data)?.into_iter().filter(|pl| modes.contains(&LrMode::of(&pl.lr))).collect();
    } else if let Some(g) = p.preset {
        for lr in lr_modes(p.lr, LrChoice::NoDecay) {
            plans.push(g.plan(&data, lr)?);
        }
    } else {
        let kind = kind_of(&p.kind)?.ok_or_else(|| anyhow!("one of --kind, --preset or --grid is required"))?;
        let distilled = data.distilled_all()?;
        for lr in lr_modes(p.lr, LrChoice::NoDecay) {
            plans.push(ExperimentPlan {
                label: kind.to_string(),
                spec: ScheduleSpec::new(kind, DEFAULT_EPOCHS),
                lr: lr.spec(),
                distilled: distilled.clone(),
                original: data.conll_original.clone(),
            });
        }
    }
    let t = epochs(ctx, &p.kind);
    for plan in &mut plans {
        plan.spec.epochs = t;
        store.check(&plan.distilled)?;
        store.check(&plan.original)?;
    }
    Ok(Loaded { plans, store })
}

fn seeds(ctx: &Ctx, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| ctx.seed.wrapping_add(i)).collect()
}

pub fn compose(ctx: &Ctx, a: ComposeArgs) -> Result<()> {
    let Loaded { plans, .. } = load_plans(ctx, &a.plan)?;
    let seeds = seeds(ctx, a.iterations.or(ctx.config.iterations).unwrap_or(1));
    if let [plan] = plans.as_slice() {
        for &seed in &seeds {
            let manifests = compose_run(&plan.spec, &plan.distilled, &plan.original, &plan.lr, seed)?;
            let rc = RunContext { spec: &plan.spec, lr: &plan.lr, distilled: &plan.distilled, original: &plan.original, seed };
            let dir = write_manifest_dir(&a.out, rc, &manifests)?;
            println!("{}", dir.display());
        }
    } else {
        let n = dry_run(&plans, &seeds, Some(&a.out))?;
        println!("composed {n} epoch manifests for {} plans x {} seeds", plans.len(), seeds.len());
    }
    Ok(())
}

/// Everything `run` writes; `report` reads the aggregates back.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunFile {
    pub aggregates: Vec<AggregateResult>,
    pub runs: Vec<RunResult>,
}

fn trainer_config(ctx: &Ctx, a: &RunArgs) -> Result<TrainerConfig> {
    Ok(match (a.trainer, &ctx.config.trainer) {
        (Some(TrainerChoice::Baseline), _) | (None, None) => TrainerConfig::Baseline,
        (Some(TrainerChoice::GoldEcho), _) => TrainerConfig::GoldEcho,
        (Some(TrainerChoice::External), cfg) => {
            let (cfg_program, cfg_args, cfg_dir) = match cfg {
                Some(TrainerConfig::External { program, args, work_dir }) => (Some(program.clone()), args.clone(), Some(work_dir.clone())),
                _ => (None, Vec::new(), None),
            };
            TrainerConfig::External {
                program: a.program.clone().or(cfg_program).ok_or_else(|| anyhow!("--program is required for the external trainer"))?,
                args: if a.args.is_empty() { cfg_args } else { a.args.clone() },
                work_dir: a.work_dir.clone().or(cfg_dir).ok_or_else(|| anyhow!("--work-dir is required for the external trainer"))?,
            }
        }
        (None, Some(cfg)) => cfg.clone(),
    })
}

pub fn run(ctx: &Ctx, a: RunArgs) -> Result<()> {
    let Loaded { plans, store } = load_plans(ctx, &a.plan)?;
    let scheme = ctx.config.scheme.unwrap_or(TagScheme::Iob1);
    let test = read_sentences(&a.test, scheme, Source::ConllTest)?;
    let seeds = seeds(ctx, a.iterations.or(ctx.config.iterations).unwrap_or(DEFAULT_ITERATIONS));
    let trainer_cfg = trainer_config(ctx, &a)?;
    let mut out = RunFile { aggregates: Vec::new(), runs: Vec::new() };
    for (i, plan) in plans.iter().enumerate() {
        let external;
        let trainer: &dyn Trainer = match &trainer_cfg {
            TrainerConfig::Baseline => &BaselineTrainer,
            TrainerConfig::GoldEcho => &GoldEchoTrainer,
            TrainerConfig::External { program, args, work_dir } => {
                let sub = format!("{i:02}-{}-{}", plan.label, LrMode::of(&plan.lr)).replace(|c: char| !c.is_ascii_alphanumeric() && c != '.', "-");
                external = ExternalTrainer { program: program.clone(), args: args.clone(), work_dir: work_dir.join(sub) };
                &external
            }
        };
        let runs = run_experiment(plan, trainer, &store, &test, &seeds).with_context(|| format!("running {}", plan.label))?;
        let agg = aggregate_runs(&runs)?;
        let spread = agg.dispersion.get("micro.f1").map_or(0.0, |d| d.stddev);
        println!("{} ({}): micro F1 {:.4} +/- {:.4} over {} runs", plan.label, LrMode::of(&plan.lr), agg.mean.micro.f1, spread, agg.runs);
        out.aggregates.push(agg);
        out.runs.extend(runs);
    }
    write_text(&a.out, &serde_json::to_string_pretty(&out)?)
}

pub fn report(_ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let mut aggregates = Vec::new();
    for p in &a.input {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let file: RunFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        aggregates.extend(file.aggregates);
    }
    let rep = emit_report(&aggregates, a.layout);
    write_outputs(&a.outputs, rep.to_json(), rep.to_csv(), rep.to_markdown())
}
