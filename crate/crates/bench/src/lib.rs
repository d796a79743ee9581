//! Benchmark inputs shared by the bench targets.

use nerdistill::corpus::{parse_conll, Sentence};
use nerdistill::{Source, TagScheme};

pub const CONLL50: &str = include_str!("../../core/tests/fixtures/conll50.iob1.txt");

/// The 50-sentence fixture repeated `copies` times.
pub fn corpus_text(copies: usize) -> String {
    CONLL50.repeat(copies)
}

pub fn sentences() -> Vec<Sentence> {
    parse_conll(CONLL50.as_bytes(), TagScheme::Iob1, Source::ConllTrain).expect("fixture parses")
}
