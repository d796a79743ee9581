use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::align::{record_to_tags, AlignmentPolicy};
use crate::annotate::AnnotationRecord;
use crate::corpus::Sentence;
use crate::label::Tag;
use crate::schedule::{lr_at_epoch, LrSpec, ScheduleKind, ScheduleSpec};

/// Training batch size recorded for the external trainer.
pub const TRAIN_BATCH_SIZE: usize = 4;
pub const EVAL_BATCH_SIZE: usize = 2;
pub const MAX_SEQ_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Gold,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub sentence_ids: Vec<String>,
    pub annotation_source: AnnotationSource,
}

impl DatasetRef {
    pub fn new(name: impl Into<String>, sentence_ids: Vec<String>, annotation_source: AnnotationSource) -> Self {
        DatasetRef { name: name.into(), sentence_ids, annotation_source }
    }

    pub fn empty(name: impl Into<String>, annotation_source: AnnotationSource) -> Self {
        DatasetRef::new(name, Vec::new(), annotation_source)
    }

    pub fn len(&self) -> usize {
        self.sentence_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence_ids.is_empty()
    }

    /// Concatenation under a new name; both parts must share a source.
    pub fn concat(name: impl Into<String>, a: &DatasetRef, b: &DatasetRef) -> Result<Self, HarnessError> {
        if a.annotation_source != b.annotation_source {
            return Err(HarnessError::Config(format!("cannot join {} and {}: annotation sources differ", a.name, b.name)));
        }
        let ids = a.sentence_ids.iter().chain(&b.sentence_ids).cloned().collect();
        let out = DatasetRef::new(name, ids, a.annotation_source);
        out.check_unique()?;
        Ok(out)
    }

    pub fn check_unique(&self) -> Result<(), HarnessError> {
        let mut seen = HashSet::with_capacity(self.len());
        for id in &self.sentence_ids {
            if !seen.insert(id) {
                return Err(HarnessError::DuplicateId { dataset: self.name.clone(), id: id.clone() });
            }
        }
        Ok(())
    }
}

/// Sentences by id, plus the tag sequences derived from LLM annotations.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    sentences: BTreeMap<String, Sentence>,
    llm_tags: BTreeMap<String, Vec<Tag>>,
}

impl CorpusStore {
    pub fn new() -> Self {
        CorpusStore::default()
    }

    pub fn insert_sentences(&mut self, sentences: impl IntoIterator<Item = Sentence>) {
        for s in sentences {
            self.sentences.insert(s.id.clone(), s);
        }
    }

    pub fn insert_llm_tags(&mut self, id: &str, tags: Vec<Tag>) -> Result<(), HarnessError> {
        let s = self.sentence(id)?;
        if s.len() != tags.len() {
            return Err(HarnessError::PredictionMismatch { id: id.to_string(), expected: s.len(), found: tags.len() });
        }
        self.llm_tags.insert(id.to_string(), tags);
        Ok(())
    }

    /// Flattens each record and stores its tags as the LLM labels of that sentence.
    pub fn insert_records(&mut self, records: &[AnnotationRecord], policy: &AlignmentPolicy) -> Result<(), HarnessError> {
        for r in records {
            let (tags, _) = record_to_tags(self.sentence(&r.sentence_id)?, r, policy)?;
            self.llm_tags.insert(r.sentence_id.clone(), tags);
        }
        Ok(())
    }

    pub fn sentence(&self, id: &str) -> Result<&Sentence, HarnessError> {
        self.sentences.get(id).ok_or_else(|| HarnessError::UnknownId(id.to_string()))
    }

    pub fn tags(&self, id: &str, source: AnnotationSource) -> Result<&[Tag], HarnessError> {
        let tags = match source {
            AnnotationSource::Gold => self.sentence(id)?.gold_tags.as_deref(),
            AnnotationSource::Llm => self.llm_tags.get(id).map(Vec::as_slice),
        };
        tags.ok_or_else(|| HarnessError::MissingTags { id: id.to_string(), annotation: source })
    }

    /// Checks that ids are unique and every one resolves to tagged data.
    pub fn check(&self, dataset: &DatasetRef) -> Result<(), HarnessError> {
        dataset.check_unique()?;
        for id in &dataset.sentence_ids {
            self.tags(id, dataset.annotation_source)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Distilled,
    Original,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderEntry {
    pub part: Part,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochManifest {
    pub epoch: usize,
    pub w0: f64,
    pub w1: f64,
    pub distilled_ids: Vec<String>,
    pub original_ids: Vec<String>,
    pub learning_rate: f64,
    /// Seeded interleaving of both id lists.
    pub order: Vec<OrderEntry>,
    /// True when this epoch switches which datasets are in use.
    pub boundary: bool,
}

impl EpochManifest {
    fn active(&self) -> (bool, bool) {
        (!self.distilled_ids.is_empty(), !self.original_ids.is_empty())
    }
}

/// Number of items for weight `w` over `n`, rounding half away from zero.
pub fn share(w: f64, n: usize) -> usize {
    (w * n as f64).round() as usize
}

fn pick(rng: &mut ChaCha8Rng, ids: &[String], n: usize) -> Vec<String> {
    if n >= ids.len() {
        return ids.to_vec();
    }
    let mut idx = index::sample(rng, ids.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| ids[i].clone()).collect()
}

pub fn compose_epoch(
    spec: &ScheduleSpec,
    t: usize,
    distilled: &DatasetRef,
    original: &DatasetRef,
    lr: &LrSpec,
    seed: u64,
) -> Result<EpochManifest, HarnessError> {
    let (w0, w1) = spec.weights(t)?;
    let (nd, no) = match spec.kind {
        ScheduleKind::AllBlend => (distilled.len(), original.len()),
        _ => (share(w0, distilled.len()), share(w1, original.len())),
    };
    for (w, ds, part) in [(w0, distilled, "distilled"), (w1, original, "original")] {
        if w > 0.0 && ds.is_empty() {
            return Err(HarnessError::EmptyDataset { name: ds.name.clone(), part: part.into() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    let distilled_ids = pick(&mut rng, &distilled.sentence_ids, nd);
    let original_ids = pick(&mut rng, &original.sentence_ids, no);
    let mut order: Vec<OrderEntry> = distilled_ids
        .iter()
        .map(|id| OrderEntry { part: Part::Distilled, id: id.clone() })
        .chain(original_ids.iter().map(|id| OrderEntry { part: Part::Original, id: id.clone() }))
        .collect();
    order.shuffle(&mut rng);
    Ok(EpochManifest {
        epoch: t,
        w0,
        w1,
        distilled_ids,
        original_ids,
        learning_rate: lr_at_epoch(lr, t),
        order,
        boundary: false,
    })
}

pub fn compose_run(
    spec: &ScheduleSpec,
    distilled: &DatasetRef,
    original: &DatasetRef,
    lr: &LrSpec,
    seed: u64,
) -> Result<Vec<EpochManifest>, HarnessError> {
    spec.validate()?;
    lr.validate()?;
    let mut out: Vec<EpochManifest> = Vec::with_capacity(spec.epochs);
    for t in 0..spec.epochs {
        let mut m = compose_epoch(spec, t, distilled, original, lr, seed)?;
        m.boundary = out.last().is_some_and(|prev| prev.active() != m.active());
        out.push(m);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMeta {
    pub epoch: usize,
    pub total_epochs: usize,
    pub seed: u64,
    pub strategy: ScheduleSpec,
    pub lr: LrSpec,
    pub w0: f64,
    pub w1: f64,
    pub learning_rate: f64,
    pub distilled_dataset: String,
    pub original_dataset: String,
    pub distilled_source: AnnotationSource,
    pub original_source: AnnotationSource,
    pub distilled_count: usize,
    pub original_count: usize,
    pub train_batch_size: usize,
    pub eval_batch_size: usize,
    pub max_seq_len: usize,
    pub boundary: bool,
    pub order: Vec<OrderEntry>,
}

/// What a run's manifests were composed from.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub spec: &'a ScheduleSpec,
    pub lr: &'a LrSpec,
    pub distilled: &'a DatasetRef,
    pub original: &'a DatasetRef,
    pub seed: u64,
}

fn write_ids(path: &Path, ids: &[String]) -> std::io::Result<()> {
    let mut text = String::with_capacity(ids.iter().map(|i| i.len() + 1).sum());
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    fs::write(path, text)
}

/// Writes `<root>/run-<seed>/epoch-<t>/{distilled.ids, original.ids, meta.json}`
/// and returns the run directory.
pub fn write_manifest_dir(root: &Path, ctx: RunContext<'_>, manifests: &[EpochManifest]) -> Result<PathBuf, HarnessError> {
    let run_dir = root.join(format!("run-{}", ctx.seed));
    for m in manifests {
        let dir = run_dir.join(format!("epoch-{}", m.epoch));
        fs::create_dir_all(&dir)?;
        write_ids(&dir.join("distilled.ids"), &m.distilled_ids)?;
        write_ids(&dir.join("original.ids"), &m.original_ids)?;
        let meta = EpochMeta {
            epoch: m.epoch,
            total_epochs: ctx.spec.epochs,
            seed: ctx.seed,
            strategy: *ctx.spec,
            lr: *ctx.lr,
            w0: m.w0,
            w1: m.w1,
            learning_rate: m.learning_rate,
            distilled_dataset: ctx.distilled.name.clone(),
            original_dataset: ctx.original.name.clone(),
            distilled_source: ctx.distilled.annotation_source,
            original_source: ctx.original.annotation_source,
            distilled_count: m.distilled_ids.len(),
            original_count: m.original_ids.len(),
            train_batch_size: TRAIN_BATCH_SIZE,
            eval_batch_size: EVAL_BATCH_SIZE,
            max_seq_len: MAX_SEQ_LEN,
            boundary: m.boundary,
            order: m.order.clone(),
        };
        let mut json = serde_json::to_string_pretty(&meta)?;
        json.push('\n');
        fs::write(dir.join("meta.json"), json)?;
    }
    Ok(run_dir)
}

fn read_ids(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Reads back a directory written by [`write_manifest_dir`].
pub fn read_manifest_dir(run_dir: &Path) -> Result<Vec<EpochManifest>, HarnessError> {
    let mut out = Vec::new();
    for t in 0.. {
        let dir = run_dir.join(format!("epoch-{t}"));
        if !dir.is_dir() {
            break;
        }
        let meta: EpochMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        out.push(EpochManifest {
            epoch: meta.epoch,
            w0: meta.w0,
            w1: meta.w1,
            distilled_ids: read_ids(&dir.join("distilled.ids"))?,
            original_ids: read_ids(&dir.join("original.ids"))?,
            learning_rate: meta.learning_rate,
            order: meta.order,
            boundary: meta.boundary,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(name: &str, n: usize, source: AnnotationSource) -> DatasetRef {
        DatasetRef::new(name, (0..n).map(|i| format!("{name}-{i:05}")).collect(), source)
    }

    #[test]
    fn half_weight_counts() {
        assert_eq!(share(0.5, 1966), 983);
        assert_eq!(share(0.5, 1000), 500);
        assert_eq!(share(0.5, 3), 2);
        assert_eq!(share(0.25, 2), 1);
    }

    #[test]
    fn simple_mix_epoch_split() {
        let d = ds("d", 1966, AnnotationSource::Llm);
        let o = ds("o", 1000, AnnotationSource::Gold);
        let spec = ScheduleSpec::new(ScheduleKind::SimpleMix, 20);
        let m = compose_epoch(&spec, 3, &d, &o, &LrSpec::default(), 1).unwrap();
        assert_eq!((m.distilled_ids.len(), m.original_ids.len()), (1966, 0));
        assert_eq!(m.distilled_ids, d.sentence_ids);
        let run = compose_run(&spec, &d, &o, &LrSpec::decaying(1e-5, 0.95), 9).unwrap();
        let marks: Vec<usize> = run.iter().filter(|m| m.boundary).map(|m| m.epoch).collect();
        assert_eq!(marks, [10]);
    }

    #[test]
    fn all_blend_uses_everything() {
        let d = ds("d", 30, AnnotationSource::Llm);
        let o = ds("o", 20, AnnotationSource::Gold);
        let m = compose_epoch(&ScheduleSpec::new(ScheduleKind::AllBlend, 20), 5, &d, &o, &LrSpec::default(), 0).unwrap();
        assert_eq!((m.distilled_ids.len(), m.original_ids.len(), m.order.len()), (30, 20, 50));
    }

    #[test]
    fn partial_sample_is_subset_and_seeded() {
        let d = ds("d", 40, AnnotationSource::Llm);
        let o = ds("o", 40, AnnotationSource::Gold);
        let spec = ScheduleSpec::new(ScheduleKind::Cosine, 20);
        let a = compose_epoch(&spec, 7, &d, &o, &LrSpec::default(), 3).unwrap();
        let b = compose_epoch(&spec, 7, &d, &o, &LrSpec::default(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.distilled_ids.len(), share(spec.w0(7).unwrap(), 40));
        let all: HashSet<&String> = d.sentence_ids.iter().collect();
        assert!(a.distilled_ids.iter().all(|i| all.contains(i)));
        let uniq: HashSet<&String> = a.distilled_ids.iter().collect();
        assert_eq!(uniq.len(), a.distilled_ids.len());
        let c = compose_epoch(&spec, 7, &d, &o, &LrSpec::default(), 4).unwrap();
        assert_ne!(a.distilled_ids, c.distilled_ids);
    }

    #[test]
    fn empty_required_dataset() {
        let d = DatasetRef::empty("d", AnnotationSource::Llm);
        let o = ds("o", 4, AnnotationSource::Gold);
        let pure_o = ScheduleSpec::new(ScheduleKind::PureOriginal, 20);
        assert!(compose_run(&pure_o, &d, &o, &LrSpec::default(), 0).is_ok());
        let pure_d = ScheduleSpec::new(ScheduleKind::PureDistilled, 20);
        assert!(matches!(
            compose_epoch(&pure_d, 0, &d, &o, &LrSpec::default(), 0),
            Err(HarnessError::EmptyDataset { .. })
        ));
    }

    #[test]
    fn directory_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let d = ds("d", 12, AnnotationSource::Llm);
        let o = ds("o", 8, AnnotationSource::Gold);
        let spec = ScheduleSpec::new(ScheduleKind::Sigmoid { k: 8.0 }, 6);
        let lr = LrSpec::decaying(1e-5, 0.95);
        let run = compose_run(&spec, &d, &o, &lr, 11).unwrap();
        let ctx = RunContext { spec: &spec, lr: &lr, distilled: &d, original: &o, seed: 11 };
        let dir = write_manifest_dir(tmp.path(), ctx, &run).unwrap();
        assert_eq!(dir, tmp.path().join("run-11"));
        assert!(dir.join("epoch-5/meta.json").is_file());
        assert_eq!(read_manifest_dir(&dir).unwrap(), run);
    }
}
