//! LLM annotation: prompt, request, parse, repair and align one sentence at a time.

pub mod client;
pub mod output;
pub mod repair;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_surface_to_spans, AlignmentPolicy};
use crate::corpus::{EntityMention, Sentence};
use crate::label::LabelSet;
use crate::prompt::{render_prompt, PromptError, PromptMode, PromptTemplate};
use client::{send_with_cache, ChatTransport, LlmRequest, ResponseCache, RetryPolicy, SendError};
use output::{parse_llm_output, RawPair};
use repair::{repair_output, RepairPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Gold,
    LlmStandard,
    LlmCot,
}

impl From<PromptMode> for Provenance {
    fn from(mode: PromptMode) -> Self {
        match mode {
            PromptMode::Standard => Provenance::LlmStandard,
            PromptMode::Cot => Provenance::LlmCot,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Gold => "gold",
            Provenance::LlmStandard => "llm-standard",
            Provenance::LlmCot => "llm-cot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Repaired,
    Rejected,
}

/// The entities one source assigns to one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sentence_id: String,
    pub provenance: Provenance,
    pub entities: Vec<EntityMention>,
    /// Pairs as parsed from the transcript, before repair.
    #[serde(default)]
    pub raw_pairs: Vec<RawPair>,
    #[serde(default)]
    pub raw_text: String,
    #[serde(default)]
    pub repairs: Vec<String>,
    pub status: RecordStatus,
}

impl AnnotationRecord {
    /// Gold mentions of a tagged sentence; an untagged sentence yields no entities.
    pub fn gold(sentence: &Sentence) -> Self {
        AnnotationRecord {
            sentence_id: sentence.id.clone(),
            provenance: Provenance::Gold,
            entities: sentence.gold_mentions(),
            raw_pairs: Vec::new(),
            raw_text: String::new(),
            repairs: Vec::new(),
            status: RecordStatus::Ok,
        }
    }

    pub fn empty(sentence_id: impl Into<String>, provenance: Provenance) -> Self {
        AnnotationRecord {
            sentence_id: sentence_id.into(),
            provenance,
            entities: Vec::new(),
            raw_pairs: Vec::new(),
            raw_text: String::new(),
            repairs: Vec::new(),
            status: RecordStatus::Ok,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PostProcess {
    pub repair: RepairPolicy,
    pub align: AlignmentPolicy,
}

/// Turns a raw model transcript into a record. Pure; the network-free half of
/// [`Annotator::annotate`].
pub fn record_from_transcript(
    sentence: &Sentence,
    raw_text: &str,
    provenance: Provenance,
    labels: &LabelSet,
    post: &PostProcess,
) -> AnnotationRecord {
    let parsed = parse_llm_output(raw_text, labels);
    let mut record = AnnotationRecord::empty(&sentence.id, provenance);
    record.raw_text = raw_text.to_string();
    record.raw_pairs = parsed.pairs;
    record.repairs = parsed.notes;
    if parsed.rejected {
        record.status = RecordStatus::Rejected;
        return record;
    }
    let (pairs, notes) = repair_output(&record.raw_pairs, sentence, labels, &post.repair);
    record.repairs.extend(notes);
    record.entities = align_surface_to_spans(sentence, &pairs, &post.align);
    record.status = if record.repairs.is_empty() { RecordStatus::Ok } else { RecordStatus::Repaired };
    record
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("sentence {id}: {source}")]
    Prompt { id: String, source: PromptError },
    #[error("sentence {id}: {source}")]
    Send { id: String, source: SendError },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Upper bound on concurrent requests.
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            model_name: "gpt-4-turbo".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            parallelism: 4,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct Annotator<'a> {
    pub template: &'a PromptTemplate,
    pub labels: &'a LabelSet,
    pub config: &'a ClientConfig,
    pub transport: &'a dyn ChatTransport,
    pub cache: &'a ResponseCache,
    pub post: PostProcess,
}

impl Annotator<'_> {
    pub fn request_for(&self, sentence: &Sentence) -> Result<LlmRequest, AnnotateError> {
        let prompt = render_prompt(self.template, sentence, self.labels)
            .map_err(|source| AnnotateError::Prompt { id: sentence.id.clone(), source })?;
        Ok(LlmRequest::new(
            &self.config.model_name,
            prompt.text,
            self.config.temperature,
            self.config.max_output_tokens,
        ))
    }

    pub fn annotate(&self, sentence: &Sentence) -> Result<AnnotationRecord, AnnotateError> {
        let request = self.request_for(sentence)?;
        let response = send_with_cache(&request, self.cache, self.transport, &self.config.retry)
            .map_err(|source| AnnotateError::Send { id: sentence.id.clone(), source })?;
        Ok(record_from_transcript(
            sentence,
            &response.raw_text,
            self.template.mode.into(),
            self.labels,
            &self.post,
        ))
    }

    /// Annotates all sentences with at most `config.parallelism` requests in
    /// flight. Results keep input order.
    pub fn annotate_all(&self, sentences: &[Sentence]) -> Result<Vec<Result<AnnotationRecord, AnnotateError>>, AnnotateError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism.max(1))
            .build()
            .map_err(|e| AnnotateError::Pool(e.to_string()))?;
        Ok(pool.install(|| sentences.par_iter().map(|s| self.annotate(s)).collect()))
    }
}

/// One line of the transcript interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub sentence_id: String,
    pub provenance: Provenance,
    pub tokens: Vec<String>,
    pub raw_text: String,
}

impl Transcript {
    pub fn of(record: &AnnotationRecord, sentence: &Sentence) -> Self {
        Transcript {
            sentence_id: record.sentence_id.clone(),
            provenance: record.provenance,
            tokens: sentence.tokens.clone(),
            raw_text: record.raw_text.clone(),
        }
    }
}
