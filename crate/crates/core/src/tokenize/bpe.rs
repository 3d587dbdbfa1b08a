//! Rank-ordered BPE over a JSON vocabulary and a merges file.
//!
//! Vocabularies whose symbols use the GPT-2 byte-to-unicode alphabet (the
//! `Ġ` word-boundary glyph) are detected and handled byte-level; anything
//! else is treated as a character-level BPE.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

pub const BYTE_LEVEL_BOUNDARY: &str = "Ġ";

#[derive(Clone, Debug, Default)]
pub struct BpeOptions {
    /// Prefix a space (the `Ġ` boundary in byte-level vocabularies) before
    /// tokenizing, as for a word in the middle of a sentence.
    pub leading_boundary: bool,
}

#[derive(Clone, Debug)]
pub struct Bpe {
    id: String,
    vocab: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    byte_level: bool,
    leading_boundary: bool,
}

pub fn load_bpe(
    vocab_path: impl AsRef<Path>,
    merges_path: impl AsRef<Path>,
    options: BpeOptions,
) -> Result<Bpe> {
    let (vocab_path, merges_path) = (vocab_path.as_ref(), merges_path.as_ref());
    let vocab_text = std::fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
    let vocab: HashMap<String, u32> = serde_json::from_str(&vocab_text)?;
    let merges_text =
        std::fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
    let merges = parse_merges(&merges_text, &merges_path.display().to_string())?;
    let id = format!(
        "bpe:{}{}",
        vocab_path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
        if options.leading_boundary { "+space" } else { "" }
    );
    Bpe::from_parts(id, vocab, merges, options)
}

/// Merge pairs in rank order. Header and comment lines start with `#`.
pub fn parse_merges(text: &str, label: &str) -> Result<Vec<(String, String)>> {
    let mut merges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                merges.push((a.to_string(), b.to_string()))
            }
            _ => {
                return Err(Error::Parse {
                    context: label.to_string(),
                    line: i + 1,
                    message: format!("expected two space-separated symbols, found {line:?}"),
                })
            }
        }
    }
    Ok(merges)
}

impl Bpe {
    pub fn from_parts(
        id: impl Into<String>,
        vocab: HashMap<String, u32>,
        merges: Vec<(String, String)>,
        options: BpeOptions,
    ) -> Result<Self> {
        let byte_level = vocab.keys().any(|t| t.contains(BYTE_LEVEL_BOUNDARY))
            || merges.iter().any(|(a, b)| a.contains(BYTE_LEVEL_BOUNDARY) || b.contains(BYTE_LEVEL_BOUNDARY));

        let mut produced: std::collections::HashSet<String> = std::collections::HashSet::new();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.into_iter().enumerate() {
            for part in [&a, &b] {
                let seen = part.chars().count() == 1
                    || produced.contains(part.as_str())
                    || vocab.contains_key(part.as_str());
                if !seen {
                    return Err(Error::Tokenizer(format!(
                        "merge rank {rank} references unseen symbol {part:?}"
                    )));
                }
            }
            produced.insert(format!("{a}{b}"));
            ranks.entry((a, b)).or_insert(rank);
        }

        Ok(Self {
            id: id.into(),
            vocab,
            ranks,
            byte_level,
            leading_boundary: options.leading_boundary,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn merge_count(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_byte_level(&self) -> bool {
        self.byte_level
    }

    pub fn leading_boundary(&self) -> bool {
        self.leading_boundary
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    /// Rank of the merge `(left, right)`, if any.
    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.ranks.get(&(left.to_string(), right.to_string())).copied()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.byte_level {
            let text = if self.leading_boundary {
                format!(" {text}")
            } else {
                text.to_string()
            };
            let table = byte_to_unicode();
            for piece in pretokenizer().find_iter(&text) {
                let symbols = piece.as_str().bytes().map(|b| table[b as usize].to_string()).collect();
                out.extend(self.merge(symbols));
            }
        } else {
            for word in text.split_whitespace() {
                out.extend(self.merge(word.chars().map(String::from).collect()));
            }
        }
        out
    }

    /// Applies merges to a symbol sequence, always taking the lowest-rank
    /// adjacent pair and merging every occurrence of it left to right.
    pub fn merge(&self, mut symbols: Vec<String>) -> Vec<String> {
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.rank(&w[0], &w[1]).map(|r| (r, w[0].clone(), w[1].clone())))
                .min_by_key(|(r, _, _)| *r);
            let Some((_, left, right)) = best else {
                return symbols;
            };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
    }

    /// Inverse of the byte-level alphabet: joins tokens back into text.
    pub fn decode(&self, tokens: &[String]) -> String {
        let joined: String = tokens.concat();
        if !self.byte_level {
            return joined;
        }
        let inverse = unicode_to_byte();
        let bytes: Vec<u8> = joined
            .chars()
            .filter_map(|c| inverse.get(&c).copied())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// GPT-2 pre-tokenization pattern without the trailing-whitespace lookahead,
/// which only matters for runs of spaces.
fn pretokenizer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+")
            .expect("static pattern")
    })
}

/// GPT-2's reversible byte → printable char table.
fn byte_to_unicode() -> &'static [char; 256] {
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = ['\0'; 256];
        let printable = |b: u32| (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
        let mut extra = 0u32;
        for b in 0..256u32 {
            table[b as usize] = if printable(b) {
                char::from_u32(b).expect("latin-1")
            } else {
                extra += 1;
                char::from_u32(255 + extra).expect("latin extended")
            };
        }
        table
    })
}

fn unicode_to_byte() -> &'static HashMap<char, u8> {
    static MAP: OnceLock<HashMap<char, u8>> = OnceLock::new();
    MAP.get_or_init(|| {
        byte_to_unicode()
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect()
    })
}
