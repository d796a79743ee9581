#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use nerdistill::annotate::client::{ChatTransport, LlmRequest, TransportError};
use nerdistill::annotate::Transcript;
use nerdistill::corpus::{parse_conll, Sentence, Source};
use nerdistill::jsonl::read_jsonl;
use nerdistill::TagScheme;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// The 50-sentence IOB1 fixture, ids `conll-train-00000..`.
pub fn conll50() -> Vec<Sentence> {
    parse_conll(fixture_text("conll50.iob1.txt").as_bytes(), TagScheme::Iob1, Source::ConllTrain).unwrap()
}

pub fn transcripts50() -> Vec<Transcript> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(fixture("transcripts50.jsonl")).unwrap())).unwrap()
}

/// Entity runs read straight off IOB1 lines: a run continues while the type
/// stays the same and no `B-` appears. Returns `(type, start, end)` per sentence.
pub fn iob1_run_oracle(text: &str) -> Vec<Vec<(String, usize, usize)>> {
    let mut out = Vec::new();
    let mut cur: Vec<(String, usize, usize)> = Vec::new();
    let mut pos = 0usize;
    let mut prev = String::from("O");
    let mut in_sentence = false;
    for line in text.lines() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() || cols[0] == "-DOCSTART-" {
            if in_sentence {
                out.push(std::mem::take(&mut cur));
            }
            in_sentence = false;
            pos = 0;
            prev = "O".into();
            continue;
        }
        in_sentence = true;
        let tag = *cols.last().unwrap();
        if tag == "O" {
            prev = "O".into();
        } else {
            let (prefix, ty) = tag.split_once('-').unwrap();
            if prefix == "B" || prev != ty {
                cur.push((ty.to_string(), pos, pos));
            } else {
                cur.last_mut().unwrap().2 = pos;
            }
            prev = ty.to_string();
        }
        pos += 1;
    }
    if in_sentence {
        out.push(cur);
    }
    out
}

/// Largest number of equal pairs over every one-to-one assignment, found by
/// trying each partial injection from `gold` into `pred`.
pub fn brute_force_matches<T: PartialEq>(gold: &[T], pred: &[T]) -> usize {
    fn go<T: PartialEq>(gold: &[T], pred: &[T], used: &mut Vec<bool>) -> usize {
        let Some((g, rest)) = gold.split_first() else { return 0 };
        let mut best = go(rest, pred, used);
        for (j, p) in pred.iter().enumerate() {
            if !used[j] && g == p {
                used[j] = true;
                best = best.max(1 + go(rest, pred, used));
                used[j] = false;
            }
        }
        best
    }
    go(gold, pred, &mut vec![false; pred.len()])
}

/// Serves fixture transcripts, keyed by the last `Sentence:` line of the prompt.
pub struct TranscriptServer {
    by_text: HashMap<String, String>,
    pub calls: std::sync::atomic::AtomicUsize,
}

impl TranscriptServer {
    pub fn new(transcripts: &[Transcript]) -> Self {
        let by_text = transcripts.iter().map(|t| (t.tokens.join(" "), t.raw_text.clone())).collect();
        TranscriptServer { by_text, calls: Default::default() }
    }
}

impl ChatTransport for TranscriptServer {
    fn complete(&self, request: &LlmRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let target = request
            .prompt_text
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Sentence: "))
            .ok_or_else(|| TransportError::Decode("prompt has no target".into()))?;
        self.by_text
            .get(target)
            .cloned()
            .ok_or_else(|| TransportError::Status { code: 404, body: target.to_string() })
    }
}
