//! Annotation prompt templates and rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::output::parse_llm_output;
use crate::corpus::Sentence;
use crate::label::LabelSet;

const EXEMPLAR_BANK: &str = include_str!("../data/exemplars-v1.json");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template has no definition for label {0}")]
    MissingDefinition(String),
    #[error("template defines label {0}, which is not configured")]
    ExtraDefinition(String),
    #[error("{mode} template has {steps} reasoning steps")]
    StepCount { mode: PromptMode, steps: usize },
    #[error("exemplar {index}: {reason}")]
    BadExemplar { index: usize, reason: String },
    #[error("sentence {0} has no tokens")]
    EmptySentence(String),
    #[error("unknown prompt mode `{0}`")]
    BadMode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Standard,
    Cot,
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptMode::Standard => "standard",
            PromptMode::Cot => "cot",
        })
    }
}

impl FromStr for PromptMode {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(PromptMode::Standard),
            "cot" => Ok(PromptMode::Cot),
            other => Err(PromptError::BadMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub sentence: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub mode: PromptMode,
    pub role_preamble: String,
    pub entity_definitions: BTreeMap<String, String>,
    #[serde(default)]
    pub reasoning_steps: Vec<String>,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
    pub output_instruction: String,
}

impl PromptTemplate {
    pub fn from_json_file(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self, labels: &LabelSet) -> Result<(), PromptError> {
        for l in labels {
            if !self.entity_definitions.contains_key(l.as_str()) {
                return Err(PromptError::MissingDefinition(l.to_string()));
            }
        }
        if let Some(extra) = self.entity_definitions.keys().find(|k| !labels.contains_str(k)) {
            return Err(PromptError::ExtraDefinition(extra.clone()));
        }
        let steps = self.reasoning_steps.len();
        if (self.mode == PromptMode::Cot) != (steps > 0) {
            return Err(PromptError::StepCount { mode: self.mode, steps });
        }
        for (index, ex) in self.exemplars.iter().enumerate() {
            let parsed = parse_llm_output(&ex.output, labels);
            if parsed.rejected {
                return Err(PromptError::BadExemplar { index, reason: parsed.notes.join("; ") });
            }
            if let Some(p) = parsed.pairs.iter().find(|p| !labels.contains_str(&p.label)) {
                return Err(PromptError::BadExemplar { index, reason: format!("unknown label {}", p.label) });
            }
        }
        Ok(())
    }

    /// Content digest of the template alone.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("template serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    /// Digest over the template fields and the target sentence.
    pub template_hash: String,
    pub target_sentence_id: String,
}

/// Chooses which exemplars go into a prompt.
pub trait ExemplarSelector: Send + Sync {
    fn select<'t>(&self, template: &'t PromptTemplate, sentence: &Sentence) -> Vec<&'t Exemplar>;
}

/// Uses the template's exemplars as written.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticBank;

impl ExemplarSelector for StaticBank {
    fn select<'t>(&self, template: &'t PromptTemplate, _sentence: &Sentence) -> Vec<&'t Exemplar> {
        template.exemplars.iter().collect()
    }
}

pub fn render_prompt(
    template: &PromptTemplate,
    sentence: &Sentence,
    labels: &LabelSet,
) -> Result<RenderedPrompt, PromptError> {
    render_prompt_with(template, sentence, labels, &StaticBank)
}

pub fn render_prompt_with(
    template: &PromptTemplate,
    sentence: &Sentence,
    labels: &LabelSet,
    selector: &dyn ExemplarSelector,
) -> Result<RenderedPrompt, PromptError> {
    template.validate(labels)?;
    if sentence.tokens.is_empty() {
        return Err(PromptError::EmptySentence(sentence.id.clone()));
    }
    let target = sentence.text();
    let mut text = String::new();
    writeln!(text, "{}\n", template.role_preamble.trim_end()).unwrap();
    text.push_str("Entity types:\n");
    for l in labels {
        writeln!(text, "- {}: {}", l, template.entity_definitions[l.as_str()]).unwrap();
    }
    if template.mode == PromptMode::Cot {
        text.push_str("\nReason in these steps:\n");
        for (i, step) in template.reasoning_steps.iter().enumerate() {
            writeln!(text, "{}. {}", i + 1, step).unwrap();
        }
    }
    let chosen = selector.select(template, sentence);
    if !chosen.is_empty() {
        text.push_str("\nExamples:\n");
        for ex in chosen {
            writeln!(text, "\nSentence: {}", ex.sentence).unwrap();
            if let (PromptMode::Cot, Some(r)) = (template.mode, &ex.reasoning) {
                writeln!(text, "Reasoning: {r}").unwrap();
            }
            writeln!(text, "Output: {}", ex.output).unwrap();
        }
    }
    writeln!(text, "\n{}", template.output_instruction.trim_end()).unwrap();
    writeln!(text, "\nSentence: {target}").unwrap();

    let mut h = Sha256::new();
    h.update(template.digest().as_bytes());
    h.update([0]);
    h.update(sentence.id.as_bytes());
    h.update([0]);
    h.update(target.as_bytes());
    Ok(RenderedPrompt { text, template_hash: hex::encode(h.finalize()), target_sentence_id: sentence.id.clone() })
}

#[derive(Deserialize)]
struct Bank {
    standard: Vec<Exemplar>,
    cot: Vec<Exemplar>,
}

fn default_definitions() -> BTreeMap<String, String> {
    [
        ("LOC", "locations such as countries, cities, regions, rivers and mountains"),
        ("ORG", "organizations such as companies, institutions, agencies, teams and parties"),
        ("PER", "names of people, including fictional characters"),
        ("MISC", "other named entities such as nationalities, events, products, languages and works"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Standard and chain-of-thought defaults over the `LOC, ORG, PER, MISC` label set.
pub fn default_templates() -> (PromptTemplate, PromptTemplate) {
    let bank: Bank = serde_json::from_str(EXEMPLAR_BANK).expect("bundled exemplar bank is valid JSON");
    let preamble = "You are an expert linguistic annotator for named entity recognition. \
                    Find every named entity in the sentence and assign it one of the entity types below.";
    let output = "Answer with a dictionary that maps entity types (LOC, ORG, PER, MISC) to lists of entity \
                  strings copied exactly as they appear in the sentence. Use {} if there are no entities.";
    let standard = PromptTemplate {
        mode: PromptMode::Standard,
        role_preamble: preamble.to_string(),
        entity_definitions: default_definitions(),
        reasoning_steps: Vec::new(),
        exemplars: bank.standard,
        output_instruction: output.to_string(),
    };
    let cot = PromptTemplate {
        mode: PromptMode::Cot,
        role_preamble: preamble.to_string(),
        entity_definitions: default_definitions(),
        reasoning_steps: vec![
            "Understand the context of the sentence.".into(),
            "Identify the candidate named entities.".into(),
            "Determine the type of each candidate from its context.".into(),
            "Justify each classification with a short reason.".into(),
        ],
        exemplars: bank.cot,
        output_instruction: format!("Write your reasoning for each step first. {output} Put the dictionary last."),
    };
    (standard, cot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;

    fn eu() -> Sentence {
        Sentence::new("s-1", Source::Other, "EU rejects German call .".split(' ').map(String::from).collect())
    }

    #[test]
    fn defaults_are_valid() {
        let labels = LabelSet::default();
        let (std_t, cot) = default_templates();
        assert_eq!(cot.reasoning_steps.len(), 4);
        assert!(std_t.reasoning_steps.is_empty());
        std_t.validate(&labels).unwrap();
        cot.validate(&labels).unwrap();
        let keys: Vec<&str> = cot.entity_definitions.keys().map(String::as_str).collect();
        assert_eq!(keys, ["LOC", "MISC", "ORG", "PER"]);
    }

    #[test]
    fn cot_render_order() {
        let (_, cot) = default_templates();
        let r = render_prompt(&cot, &eu(), &LabelSet::default()).unwrap();
        let pos = |needle: &str| r.text.find(needle).unwrap_or_else(|| panic!("missing {needle}"));
        let order = [
            pos("expert linguistic annotator"),
            pos("- LOC:"),
            pos("- MISC:"),
            pos("1. Understand"),
            pos("4. Justify"),
            pos("Examples:"),
            pos("Put the dictionary last."),
            r.text.rfind("Sentence: EU rejects German call .").unwrap(),
        ];
        assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
        assert_eq!(r.target_sentence_id, "s-1");
    }

    #[test]
    fn standard_without_exemplars() {
        let (mut t, _) = default_templates();
        t.exemplars.clear();
        let r = render_prompt(&t, &eu(), &LabelSet::default()).unwrap();
        assert!(!r.text.contains("Examples:"));
        assert!(!r.text.contains("Reason in these steps"));
    }

    #[test]
    fn hash_tracks_content() {
        let (t, _) = default_templates();
        let labels = LabelSet::default();
        let a = render_prompt(&t, &eu(), &labels).unwrap();
        assert_eq!(a, render_prompt(&t, &eu(), &labels).unwrap());
        let mut t2 = t.clone();
        t2.role_preamble.push('!');
        assert_ne!(a.template_hash, render_prompt(&t2, &eu(), &labels).unwrap().template_hash);
        let mut s = eu();
        s.tokens[0] = "UN".into();
        assert_ne!(a.template_hash, render_prompt(&t, &s, &labels).unwrap().template_hash);
    }

    #[test]
    fn label_mismatch_rejected() {
        let (t, _) = default_templates();
        let narrow = LabelSet::new(["PER", "LOC", "ORG"].map(crate::label::Label::from));
        assert!(matches!(render_prompt(&t, &eu(), &narrow), Err(PromptError::ExtraDefinition(_))));
        let wide = LabelSet::new(["PER", "LOC", "ORG", "MISC", "DATE"].map(crate::label::Label::from));
        assert!(matches!(t.validate(&wide), Err(PromptError::MissingDefinition(l)) if l == "DATE"));
    }

    #[test]
    fn mode_step_invariant() {
        let (mut t, mut c) = default_templates();
        t.reasoning_steps.push("think".into());
        assert!(matches!(t.validate(&LabelSet::default()), Err(PromptError::StepCount { .. })));
        c.reasoning_steps.clear();
        assert!(c.validate(&LabelSet::default()).is_err());
    }

    #[test]
    fn bad_exemplar_rejected() {
        let (mut t, _) = default_templates();
        t.exemplars.push(Exemplar { sentence: "x".into(), output: "no dict".into(), reasoning: None });
        assert!(matches!(t.validate(&LabelSet::default()), Err(PromptError::BadExemplar { index: 3, .. })));
    }
}
