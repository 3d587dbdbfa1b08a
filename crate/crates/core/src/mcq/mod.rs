//! Multiple-choice questions, name spotting and substitution, distractor
//! pools, and evaluation-set assembly.

mod distractors;
mod eval;
mod words;

pub use distractors::{
    build_distractor_pool, rule_based_distractors, DistractorPool, DistractorProvider,
    DistractorRequest, DistractorResponse, HttpProvider, PipeProvider, RuleBasedProvider,
    DEFAULT_STOPWORDS,
};
pub use eval::{assemble_eval_set, distractor_position, eval_set_size, EvalInstance};
pub use words::{extract_words, word_set, WordOptions};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::names::RowDiagnostic;
use crate::tokenize::title_case;

/// A mention of a name in the context. Offsets are byte offsets into
/// `Mcq::context`; the JSONL carrier uses character offsets.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NameSpan {
    pub start: usize,
    pub end: usize,
    /// Canonical identity; every mention of one person shares it.
    pub name: String,
}

/// Replacement provenance carried by augmented samples.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub replacements: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mcq {
    pub id: String,
    pub context: String,
    pub question: String,
    pub choices: [String; 3],
    pub correct_index: usize,
    pub name_spans: Vec<NameSpan>,
    pub provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct McqLine {
    id: String,
    context: String,
    question: String,
    choices: Vec<String>,
    label: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    name_spans: Vec<(usize, usize, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replacements: Option<BTreeMap<String, String>>,
}

impl Mcq {
    pub fn new(
        id: impl Into<String>,
        context: impl Into<String>,
        question: impl Into<String>,
        choices: [&str; 3],
        correct_index: usize,
    ) -> Result<Self> {
        if correct_index > 2 {
            return Err(Error::InvalidInput(format!("correct index {correct_index} out of range")));
        }
        Ok(Self {
            id: id.into(),
            context: context.into(),
            question: question.into(),
            choices: choices.map(String::from),
            correct_index,
            name_spans: Vec::new(),
            provenance: None,
        })
    }

    pub fn correct(&self) -> &str {
        &self.choices[self.correct_index]
    }

    /// Distinct canonical names in order of first mention.
    pub fn canonical_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.name_spans
            .iter()
            .filter(|s| seen.insert(s.name.as_str()))
            .map(|s| s.name.as_str())
            .collect()
    }

    /// Parses and validates one JSONL line.
    pub fn from_json_line(line: &str) -> std::result::Result<Self, String> {
        let raw: McqLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let choices: [String; 3] = raw
            .choices
            .try_into()
            .map_err(|c: Vec<String>| format!("expected 3 choices, found {}", c.len()))?;
        if raw.label > 2 {
            return Err(format!("label {} out of range 0..2", raw.label));
        }
        let mut spans = Vec::with_capacity(raw.name_spans.len());
        for (start, end, name) in raw.name_spans {
            let (Some(s), Some(e)) = (char_to_byte(&raw.context, start), char_to_byte(&raw.context, end))
            else {
                return Err(format!("span [{start},{end}) out of bounds"));
            };
            if s >= e {
                return Err(format!("empty span [{start},{end})"));
            }
            spans.push(NameSpan { start: s, end: e, name });
        }
        spans.sort();
        if spans.windows(2).any(|w| w[0].end > w[1].start) {
            return Err("overlapping name spans".into());
        }
        let provenance = raw.source_id.map(|source_id| Provenance {
            source_id,
            replacements: raw.replacements.unwrap_or_default(),
        });
        Ok(Self {
            id: raw.id,
            context: raw.context,
            question: raw.question,
            choices,
            correct_index: raw.label,
            name_spans: spans,
            provenance,
        })
    }

    pub fn to_json_line(&self) -> String {
        let name_spans = self
            .name_spans
            .iter()
            .map(|s| {
                (
                    self.context[..s.start].chars().count(),
                    self.context[..s.end].chars().count(),
                    s.name.clone(),
                )
            })
            .collect();
        let line = McqLine {
            id: self.id.clone(),
            context: self.context.clone(),
            question: self.question.clone(),
            choices: self.choices.to_vec(),
            label: self.correct_index,
            name_spans,
            source_id: self.provenance.as_ref().map(|p| p.source_id.clone()),
            replacements: self.provenance.as_ref().map(|p| p.replacements.clone()),
        };
        serde_json::to_string(&line).expect("mcq serializes")
    }
}

fn char_to_byte(text: &str, chars: usize) -> Option<usize> {
    if chars == 0 {
        return Some(0);
    }
    text.char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .nth(chars)
}

#[derive(Clone, Debug, Default)]
pub struct McqLoad {
    pub mcqs: Vec<Mcq>,
    pub diagnostics: Vec<RowDiagnostic>,
}

pub fn load_mcqs(path: impl AsRef<Path>) -> Result<McqLoad> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_mcqs(BufReader::new(file), &path.display().to_string())
}

/// Reads MCQ JSONL. Malformed JSON is a hard error; lines that parse but
/// violate the MCQ invariants are skipped with a diagnostic.
pub fn read_mcqs(reader: impl BufRead, label: &str) -> Result<McqLoad> {
    let mut load = McqLoad::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        if let Err(e) = serde_json::from_str::<serde_json::Value>(&line) {
            return Err(Error::Parse {
                context: label.to_string(),
                line: lineno,
                message: e.to_string(),
            });
        }
        match Mcq::from_json_line(&line) {
            Ok(mcq) => load.mcqs.push(mcq),
            Err(message) => load.diagnostics.push(RowDiagnostic {
                line: lineno as u64,
                message,
            }),
        }
    }
    Ok(load)
}

pub fn write_mcqs<'a>(mut out: impl Write, mcqs: impl IntoIterator<Item = &'a Mcq>) -> Result<()> {
    for mcq in mcqs {
        writeln!(out, "{}", mcq.to_json_line())?;
    }
    Ok(())
}

/// Known names, matched in their title-case form.
#[derive(Clone, Debug)]
pub struct NameLexicon {
    names: HashSet<String>,
    max_words: usize,
}

impl NameLexicon {
    pub fn new<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: HashSet<String> = names.into_iter().map(|n| title_case(n.as_ref())).collect();
        if names.is_empty() {
            return Err(Error::InvalidInput("empty name lexicon".into()));
        }
        let max_words = names.iter().map(|n| word_ranges(n).len()).max().unwrap_or(1).max(1);
        Ok(Self { names, max_words })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Maximal alphanumeric runs as byte ranges.
fn word_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

/// Finds whole-word, title-case mentions of lexicon names in the context,
/// preferring the longest match (`Mary-Jo` over `Mary`). Replaces any
/// existing spans.
pub fn spot_names(mcq: &Mcq, lexicon: &NameLexicon) -> Mcq {
    let text = &mcq.context;
    let words = word_ranges(text);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let mut matched = None;
        let last = (i + lexicon.max_words).min(words.len());
        for j in (i..last).rev() {
            // compound names join words with exactly one non-space separator
            let joined = (i..j).all(|k| {
                let gap = &text[words[k].1..words[k + 1].0];
                gap.chars().count() == 1 && !gap.starts_with(char::is_whitespace)
            });
            if !joined {
                continue;
            }
            let surface = &text[words[i].0..words[j].1];
            if lexicon.contains(surface) {
                matched = Some((j, surface.to_string()));
                break;
            }
        }
        match matched {
            Some((j, name)) => {
                spans.push(NameSpan {
                    start: words[i].0,
                    end: words[j].1,
                    name,
                });
                i = j + 1;
            }
            None => i += 1,
        }
    }
    Mcq {
        name_spans: spans,
        ..mcq.clone()
    }
}

/// Replaces every mention of `canonical` with `replacement`.
pub fn substitute_name(mcq: &Mcq, canonical: &str, replacement: &str) -> Result<Mcq> {
    let map = BTreeMap::from([(canonical.to_string(), replacement.to_string())]);
    substitute_names(mcq, &map)
}

/// Simultaneous substitution of several canonical names: context spans are
/// rewritten by offset, and question and choices by whole-word match. Text
/// outside those ranges is untouched and `correct_index` is preserved.
pub fn substitute_names(mcq: &Mcq, map: &BTreeMap<String, String>) -> Result<Mcq> {
    for canonical in map.keys() {
        if !mcq.name_spans.iter().any(|s| &s.name == canonical) {
            return Err(Error::NameNotFound(canonical.clone()));
        }
    }
    let mut context = String::with_capacity(mcq.context.len());
    let mut spans = Vec::with_capacity(mcq.name_spans.len());
    let mut cursor = 0;
    for span in &mcq.name_spans {
        context.push_str(&mcq.context[cursor..span.start]);
        let start = context.len();
        let name = match map.get(&span.name) {
            Some(replacement) => {
                context.push_str(replacement);
                replacement.clone()
            }
            None => {
                context.push_str(&mcq.context[span.start..span.end]);
                span.name.clone()
            }
        };
        spans.push(NameSpan {
            start,
            end: context.len(),
            name,
        });
        cursor = span.end;
    }
    context.push_str(&mcq.context[cursor..]);

    Ok(Mcq {
        id: mcq.id.clone(),
        context,
        question: replace_whole_words(&mcq.question, map),
        choices: mcq.choices.clone().map(|c| replace_whole_words(&c, map)),
        correct_index: mcq.correct_index,
        name_spans: spans,
        provenance: mcq.provenance.clone(),
    })
}

/// Case-sensitive whole-word replacement of every key in one left-to-right
/// pass, so `A→B, B→A` swaps rather than chains.
pub fn replace_whole_words(text: &str, map: &BTreeMap<String, String>) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    let mut keys: Vec<(&String, &String)> = map.iter().filter(|(k, _)| !k.is_empty()).collect();
    keys.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));

    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let mut previous: Option<char> = None;
    while i < text.len() {
        let rest = &text[i..];
        let at_boundary = !previous.is_some_and(char::is_alphanumeric);
        let hit = at_boundary
            .then(|| {
                keys.iter().find(|(k, _)| {
                    rest.starts_with(k.as_str())
                        && !rest[k.len()..].chars().next().is_some_and(char::is_alphanumeric)
                })
            })
            .flatten();
        match hit {
            Some((key, replacement)) => {
                out.push_str(replacement);
                previous = key.chars().next_back();
                i += key.len();
            }
            None => {
                let c = rest.chars().next().expect("non-empty");
                out.push(c);
                previous = Some(c);
                i += c.len_utf8();
            }
        }
    }
    out
}
