//! Per-epoch manifest composition, training runs, averaging and reports.

pub mod baseline;
pub mod manifest;
pub mod report;
pub mod runner;

use thiserror::Error;

pub use baseline::BaselineModel;
pub use manifest::{
    compose_epoch, compose_run, read_manifest_dir, write_manifest_dir, AnnotationSource, CorpusStore, DatasetRef,
    EpochManifest, RunContext,
};
pub use report::{emit_report, ComparisonReport, Layout};
pub use runner::{
    aggregate_runs, dry_run, evaluate_predictions, standard_grid, run_experiment, AggregateResult, BaselineTrainer,
    ExperimentPlan, ExternalTrainer, GoldEchoTrainer, GroupPreset, LrMode, GroupData, RunResult, Trainer,
};

use crate::corpus::CorpusError;
use crate::jsonl::JsonlError;
use crate::schedule::ScheduleError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{part} dataset {name} is empty but has nonzero weight")]
    EmptyDataset { name: String, part: String },
    #[error("dataset {dataset} lists {id} more than once")]
    DuplicateId { dataset: String, id: String },
    #[error("unknown sentence id {0}")]
    UnknownId(String),
    #[error("sentence {id} has no {annotation:?} tags")]
    MissingTags { id: String, annotation: AnnotationSource },
    #[error("sentence {id}: expected {expected} tags, found {found}")]
    PredictionMismatch { id: String, expected: usize, found: usize },
    #[error("expected predictions for {expected} sentences, found {found}")]
    PredictionCount { expected: usize, found: usize },
    #[error("trainer exited with {status}:\n{output}")]
    Trainer { status: String, output: String },
    #[error("cannot aggregate different strategies: {first} vs {other}")]
    MixedStrategies { first: String, other: String },
    #[error("no run results to aggregate")]
    NoResults,
    #[error("{0}")]
    Config(String),
}
