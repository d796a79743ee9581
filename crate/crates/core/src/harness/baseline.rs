use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::manifest::{CorpusStore, DatasetRef, EpochManifest};
use super::HarnessError;
use crate::label::{to_iob2, Tag};

/// Per-token majority tagger. Unseen tokens get `O`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineModel {
    table: HashMap<String, Tag>,
}

/// Tag with the highest count; ties go to `O`, then to the smaller tag string.
fn choose(counts: &HashMap<Tag, u64>) -> Tag {
    let key = |t: &Tag| (!t.is_outside(), t.to_string());
    counts
        .iter()
        .max_by(|(ta, ca), (tb, cb)| ca.cmp(cb).then_with(|| key(tb).cmp(&key(ta))))
        .map(|(t, _)| t.clone())
        .unwrap_or(Tag::Outside)
}

impl BaselineModel {
    /// Counts every (token, tag) occurrence over all epochs of the run.
    pub fn train(
        manifests: &[EpochManifest],
        store: &CorpusStore,
        distilled: &DatasetRef,
        original: &DatasetRef,
    ) -> Result<Self, HarnessError> {
        let mut counts: HashMap<String, HashMap<Tag, u64>> = HashMap::new();
        for m in manifests {
            for (ids, ds) in [(&m.distilled_ids, distilled), (&m.original_ids, original)] {
                for id in ids {
                    let tokens = &store.sentence(id)?.tokens;
                    let tags = store.tags(id, ds.annotation_source)?;
                    for (tok, tag) in tokens.iter().zip(tags) {
                        *counts.entry(tok.clone()).or_default().entry(tag.clone()).or_default() += 1;
                    }
                }
            }
        }
        let table = counts.into_iter().map(|(tok, c)| (tok, choose(&c))).collect();
        Ok(BaselineModel { table })
    }

    pub fn tag_of(&self, token: &str) -> Tag {
        self.table.get(token).cloned().unwrap_or(Tag::Outside)
    }

    /// Tags a sentence and repairs the sequence into valid IOB2.
    pub fn predict(&self, tokens: &[String]) -> Vec<Tag> {
        let raw: Vec<Tag> = tokens.iter().map(|t| self.tag_of(t)).collect();
        to_iob2(&raw)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.table.len()
    }
}
