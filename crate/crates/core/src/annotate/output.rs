//! Tolerant reader for the dictionary answer format, e.g.
//! `{'LOC': ['Houston'], 'PER': ['Orlando Miller', 'Todd Stottlemyre']}`.
//!
//! The reader takes the last balanced `{...}` region of a transcript, so any
//! reasoning printed before the answer is ignored. Accepted variations: single
//! or double quotes, bare keys, a scalar string in place of a list, trailing
//! commas, arbitrary whitespace, `None`/`null` values, doubled outer braces, and
//! a bare string after a value (`'k': 'a', 'b'`) which is read as another value
//! of the preceding key. A list nested inside a value list groups the fragments
//! of one discontinuous entity.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::label::LabelSet;

/// One `(label, surface)` pair as written by the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPair {
    pub label: String,
    pub surface: String,
    /// Pairs sharing a group id are fragments of one discontinuous entity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
}

impl RawPair {
    pub fn new(label: impl Into<String>, surface: impl Into<String>) -> Self {
        RawPair { label: label.into(), surface: surface.into(), group: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedOutput {
    pub pairs: Vec<RawPair>,
    pub notes: Vec<String>,
    /// Set when no usable dictionary could be read; `notes` says why.
    pub rejected: bool,
}

impl ParsedOutput {
    fn reject(note: impl Into<String>) -> Self {
        ParsedOutput { pairs: Vec::new(), notes: vec![note.into()], rejected: true }
    }
}

pub const NO_DICT: &str = "no output dict found";
pub const UNBALANCED: &str = "unbalanced braces";

/// Extracts `(label, surface)` pairs from a model transcript.
///
/// Keys that match a configured label only up to ASCII case are rewritten to
/// the configured spelling, with a note. Other unknown keys are passed through
/// for the repair stage to drop.
pub fn parse_llm_output(raw_text: &str, labels: &LabelSet) -> ParsedOutput {
    let region = match last_dict_region(raw_text) {
        Ok(r) => r,
        Err(note) => return ParsedOutput::reject(note),
    };
    let mut parser = Parser { src: &raw_text[region.0..region.1], pos: 0 };
    match parser.dict_maybe_doubled() {
        Ok((entries, unwrapped)) => {
            let mut out = ParsedOutput::default();
            if unwrapped {
                out.notes.push("unwrapped doubled braces".to_string());
            }
            finish(entries, labels, out)
        }
        Err(e) => ParsedOutput::reject(format!("malformed output dict: {e}")),
    }
}

type Entries = Vec<(String, Vec<Value>)>;

fn finish(entries: Entries, labels: &LabelSet, mut out: ParsedOutput) -> ParsedOutput {
    let mut seen: Vec<String> = Vec::new();
    let mut group = 0usize;
    for (key, values) in entries {
        let label = match labels.iter().find(|l| l.as_str().eq_ignore_ascii_case(&key)) {
            Some(l) if l.as_str() != key => {
                out.notes.push(format!("label case: `{key}` read as {l}"));
                l.to_string()
            }
            _ => key,
        };
        if seen.contains(&label) {
            out.notes.push(format!("merged duplicate label {label}"));
        } else {
            seen.push(label.clone());
        }
        for v in values {
            match v {
                Value::Str(s) => push_surface(&mut out, &label, s, None),
                Value::Group(frags) => {
                    for f in frags {
                        push_surface(&mut out, &label, f, Some(group));
                    }
                    group += 1;
                }
            }
        }
    }
    out
}

fn push_surface(out: &mut ParsedOutput, label: &str, surface: String, group: Option<usize>) {
    let trimmed = surface.trim();
    if trimmed.is_empty() {
        out.notes.push(format!("empty surface under {label} dropped"));
        return;
    }
    out.pairs.push(RawPair { label: label.to_string(), surface: trimmed.to_string(), group });
}

/// Byte range of the last balanced top-level brace region.
fn last_dict_region(text: &str) -> Result<(usize, usize), &'static str> {
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut last = None;
    for (i, c) in text.char_indices() {
        match c {
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    last = Some((start, i + 1));
                }
            }
            _ => {}
        }
    }
    match (last, depth) {
        (_, d) if d > 0 => Err(UNBALANCED),
        (Some(r), _) => Ok(r),
        (None, _) => Err(NO_DICT),
    }
}

enum Value {
    Str(String),
    Group(Vec<String>),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

type PResult<T> = Result<T, String>;

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn expect(&mut self, want: char) -> PResult<()> {
        self.ws();
        match self.bump() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(format!("expected `{want}` at byte {}, found `{c}`", self.pos - c.len_utf8())),
            None => Err(format!("expected `{want}`, found end of input")),
        }
    }

    fn dict_maybe_doubled(&mut self) -> PResult<(Entries, bool)> {
        let save = self.pos;
        self.expect('{')?;
        self.ws();
        if self.peek() == Some('{') {
            let inner = self.dict()?;
            self.expect('}')?;
            return Ok((inner, true));
        }
        self.pos = save;
        Ok((self.dict()?, false))
    }

    fn dict(&mut self) -> PResult<Entries> {
        self.expect('{')?;
        let mut entries: Entries = Vec::new();
        loop {
            self.ws();
            match self.peek() {
                Some('}') => {
                    self.bump();
                    return Ok(entries);
                }
                None => return Err("unterminated dict".into()),
                _ => {}
            }
            let key_start = self.pos;
            let key = self.key()?;
            self.ws();
            match self.peek() {
                Some(':') => {
                    self.bump();
                    let values = self.value()?;
                    entries.push((key, values));
                }
                Some(',') | Some('}') if self.was_quoted(key_start) => match entries.last_mut() {
                    // 'k': 'a', 'b'  -> 'b' is another value of k
                    Some((_, values)) => values.push(Value::Str(key)),
                    None => return Err(format!("value `{key}` without a label")),
                },
                Some(c) => return Err(format!("expected `:` after key `{key}`, found `{c}`")),
                None => return Err("unterminated dict".into()),
            }
            self.ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some('}') => {}
                Some(c) => return Err(format!("expected `,` or `}}`, found `{c}`")),
                None => return Err("unterminated dict".into()),
            }
        }
    }

    fn was_quoted(&self, at: usize) -> bool {
        matches!(self.src[at..].chars().next(), Some('\'') | Some('"'))
    }

    fn key(&mut self) -> PResult<String> {
        self.ws();
        match self.peek() {
            Some('\'') | Some('"') => self.string(),
            Some(c) if c.is_alphanumeric() || c == '_' => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '-') {
                    self.bump();
                }
                Ok(self.src[start..self.pos].to_string())
            }
            Some(c) => Err(format!("unexpected `{c}` where a label was expected")),
            None => Err("unterminated dict".into()),
        }
    }

    fn value(&mut self) -> PResult<Vec<Value>> {
        self.ws();
        match self.peek() {
            Some('\'') | Some('"') => Ok(vec![Value::Str(self.string()?)]),
            Some('[') | Some('(') => self.list(),
            Some(c) if c.is_alphabetic() => {
                let word = self.key()?;
                match word.as_str() {
                    "None" | "null" | "none" | "NULL" => Ok(Vec::new()),
                    _ => Err(format!("unquoted value `{word}`")),
                }
            }
            Some(c) => Err(format!("unsupported value starting with `{c}`")),
            None => Err("unterminated dict".into()),
        }
    }

    fn list(&mut self) -> PResult<Vec<Value>> {
        let close = match self.bump() {
            Some('[') => ']',
            Some('(') => ')',
            _ => unreachable!("list() called off a bracket"),
        };
        let mut out = Vec::new();
        loop {
            self.ws();
            match self.peek() {
                Some(c) if c == close => {
                    self.bump();
                    return Ok(out);
                }
                Some('\'') | Some('"') => out.push(Value::Str(self.string()?)),
                Some('[') | Some('(') => {
                    let inner = self.list()?;
                    let mut frags = Vec::new();
                    for v in inner {
                        match v {
                            Value::Str(s) => frags.push(s),
                            Value::Group(_) => return Err("lists nested more than two deep".into()),
                        }
                    }
                    if !frags.is_empty() {
                        out.push(Value::Group(frags));
                    }
                }
                Some(c) if c.is_alphabetic() => {
                    let word = self.key()?;
                    if !matches!(word.as_str(), "None" | "null") {
                        return Err(format!("unquoted list item `{word}`"));
                    }
                }
                Some(c) => return Err(format!("unexpected `{c}` in list")),
                None => return Err("unterminated list".into()),
            }
            self.ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(c) if c == close => {}
                Some(c) => return Err(format!("expected `,` or `{close}` in list, found `{c}`")),
                None => return Err("unterminated list".into()),
            }
        }
    }

    /// A quoted string. A quote character only closes the string when the next
    /// non-space character could follow a string (`, : ] ) }` or end); this
    /// keeps apostrophes such as `'O'Neill'` inside the value.
    fn string(&mut self) -> PResult<String> {
        let quote = self.bump().expect("string() called on a quote");
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err("unterminated string".into()),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('u') => {
                        let hex: String = self.src[self.pos..].chars().take(4).collect();
                        match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                            Some(c) if hex.len() == 4 => {
                                self.pos += 4;
                                out.push(c);
                            }
                            _ => out.push_str("\\u"),
                        }
                    }
                    Some(c) => out.push(c),
                    None => return Err("unterminated string".into()),
                },
                Some(c) if c == quote => {
                    let rest = self.src[self.pos..].trim_start();
                    if rest.is_empty() || rest.starts_with([',', ':', ']', ')', '}']) {
                        return Ok(out);
                    }
                    out.push(c);
                }
                Some(c) => out.push(c),
            }
        }
    }
}

/// Renders pairs in the canonical single-quoted form, labels in first-seen
/// order, grouped fragments as nested lists.
pub fn print_canonical(pairs: &[RawPair]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for p in pairs {
        if !labels.contains(&p.label.as_str()) {
            labels.push(&p.label);
        }
    }
    let mut out = String::from("{");
    for (li, label) in labels.iter().enumerate() {
        if li > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}: [", quote(label));
        let mut first = true;
        let mut i = 0;
        let mine: Vec<&RawPair> = pairs.iter().filter(|p| p.label == *label).collect();
        while i < mine.len() {
            if !first {
                out.push_str(", ");
            }
            first = false;
            match mine[i].group {
                None => {
                    out.push_str(&quote(&mine[i].surface));
                    i += 1;
                }
                Some(g) => {
                    out.push('[');
                    let mut j = i;
                    while j < mine.len() && mine[j].group == Some(g) {
                        if j > i {
                            out.push_str(", ");
                        }
                        out.push_str(&quote(&mine[j].surface));
                        j += 1;
                    }
                    out.push(']');
                    i = j;
                }
            }
        }
        out.push(']');
    }
    out.push('}');
    out
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\'' | '\\' => {
                out.push('\\');
                out.push(c);
            }
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> ParsedOutput {
        parse_llm_output(s, &LabelSet::default())
    }

    fn pairs(p: &ParsedOutput) -> Vec<(&str, &str)> {
        p.pairs.iter().map(|p| (p.label.as_str(), p.surface.as_str())).collect()
    }

    #[test]
    fn houston_dict() {
        let p = parse(
            "Step 4: done.\n{'LOC': ['Houston'], 'PER': ['Orlando Miller', 'Todd Stottlemyre'], \
             'ORG': ['Houston Astros', 'St. Louis Cardinals', 'NL Central division']}",
        );
        assert!(!p.rejected);
        assert!(p.notes.is_empty());
        assert_eq!(p.pairs.len(), 6);
        assert_eq!(pairs(&p)[2], ("PER", "Todd Stottlemyre"));
    }

    #[test]
    fn nested_example_scalar_values() {
        let p = parse("Step 1 ... Step 4 ... {'ORG': 'national basketball of America', 'LOC': 'America'}");
        assert_eq!(pairs(&p), [("ORG", "national basketball of America"), ("LOC", "America")]);
    }

    #[test]
    fn orphan_value_joins_previous_key() {
        let p = parse("{'symptom': 'fingers swelled up', 'fingers hurt'}");
        assert_eq!(pairs(&p), [("symptom", "fingers swelled up"), ("symptom", "fingers hurt")]);
    }

    #[test]
    fn empty_and_missing() {
        let p = parse("no entities: {}");
        assert!(!p.rejected && p.pairs.is_empty() && p.notes.is_empty());
        let p = parse("I found nothing.");
        assert!(p.rejected);
        assert_eq!(p.notes, [NO_DICT]);
        let p = parse("{'LOC': ['Paris'], 'PER': [");
        assert!(p.rejected);
        assert_eq!(p.notes, [UNBALANCED]);
    }

    #[test]
    fn last_dict_wins() {
        let p = parse("Candidates {'PER': ['x']} ... final: {\"LOC\": \"Paris\",}");
        assert_eq!(pairs(&p), [("LOC", "Paris")]);
    }

    #[test]
    fn doubled_braces() {
        let p = parse("{{'LOC': ['Houston']}}");
        assert_eq!(pairs(&p), [("LOC", "Houston")]);
        assert_eq!(p.notes.len(), 1);
    }

    #[test]
    fn duplicate_keys_merge() {
        let p = parse("{'PER': ['A'], 'LOC': [], 'PER': 'B'}");
        assert_eq!(pairs(&p), [("PER", "A"), ("PER", "B")]);
        assert_eq!(p.notes, ["merged duplicate label PER"]);
    }

    #[test]
    fn apostrophes_and_escapes() {
        let p = parse(r#"{'PER': ['O'Neill', 'D\'Arcy'], LOC: None, "MISC": ["say \"hi\""]}"#);
        assert_eq!(pairs(&p), [("PER", "O'Neill"), ("PER", "D'Arcy"), ("MISC", "say \"hi\"")]);
    }

    #[test]
    fn label_case_canonicalized() {
        let p = parse("{'per': ['Ann']}");
        assert_eq!(pairs(&p), [("PER", "Ann")]);
        assert_eq!(p.notes.len(), 1);
    }

    #[test]
    fn grouped_fragments() {
        let p = parse("{'PER': [['Ann', 'Lee'], 'Bo']}");
        assert_eq!(p.pairs[0].group, Some(0));
        assert_eq!(p.pairs[1].group, Some(0));
        assert_eq!(p.pairs[2].group, None);
        assert_eq!(print_canonical(&p.pairs), "{'PER': [['Ann', 'Lee'], 'Bo']}");
    }

    #[test]
    fn malformed_rejected() {
        let p = parse("{'PER': ['Ann'] 'LOC': []}");
        assert!(p.rejected);
        assert!(p.notes[0].starts_with("malformed output dict"));
        assert!(parse("{'PER': {'x': 'y'}}").rejected);
    }
}
