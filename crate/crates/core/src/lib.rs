//! Toolkit for distilling LLM entity annotations into training data for a small
//! sequence tagger.
//!
//! The pipeline runs corpus sampling ([`corpus`]), prompt rendering ([`prompt`]),
//! LLM annotation with output repair ([`annotate`]), surface-to-span alignment
//! ([`align`]), entity-level scoring ([`metrics`]), distilled/original blending
//! schedules ([`schedule`]) and per-epoch manifest composition plus experiment
//! orchestration ([`harness`]).

pub mod align;
pub mod annotate;
pub mod corpus;
pub mod harness;
pub mod jsonl;
pub mod label;
pub mod metrics;
pub mod prompt;
pub mod schedule;

pub use align::{AlignmentPolicy, FlattenReport};
pub use annotate::{AnnotationRecord, Provenance, RecordStatus};
pub use corpus::{EntityMention, Sentence, Source, Span};
pub use label::{Label, LabelSet, Tag, TagScheme};
pub use metrics::{EvalReport, MatchCounts};
pub use schedule::{LrSpec, ScheduleKind, ScheduleSpec};
