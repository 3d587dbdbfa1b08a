//! Subword tokenizers and name tokenization statistics.

mod bpe;
mod stats;
mod wordpiece;

pub use bpe::{load_bpe, parse_merges, Bpe, BpeOptions, BYTE_LEVEL_BOUNDARY};
pub use stats::{
    conditional_stats, corpus_frequency, length_bucket, mean_char_length, Attribute,
    ConditionalMatrix, Direction, Weighting, LENGTH_BUCKETS,
};
pub use wordpiece::{load_wordpiece, WordPiece, WordPieceOptions};

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    WordPiece,
    BytePairEncoding,
}

#[derive(Clone, Debug)]
pub enum Tokenizer {
    WordPiece(WordPiece),
    Bpe(Bpe),
}

impl Tokenizer {
    /// Parses `wp:<vocab.txt>`, `bpe:<vocab.json>,<merges.txt>` or
    /// `bpe+space:<vocab.json>,<merges.txt>` (leading word boundary).
    pub fn from_spec(spec: &str) -> Result<Self> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::InvalidInput(format!("tokenizer spec {spec:?} lacks a kind prefix")))?;
        match kind {
            "wp" | "wordpiece" => Ok(Tokenizer::WordPiece(load_wordpiece(
                rest,
                WordPieceOptions::default(),
            )?)),
            "bpe" | "bpe+space" => {
                let (vocab, merges) = rest.split_once(',').ok_or_else(|| {
                    Error::InvalidInput(format!("bpe spec needs <vocab.json>,<merges.txt>: {spec:?}"))
                })?;
                let options = BpeOptions {
                    leading_boundary: kind == "bpe+space",
                };
                Ok(Tokenizer::Bpe(load_bpe(Path::new(vocab), Path::new(merges), options)?))
            }
            other => Err(Error::InvalidInput(format!("unknown tokenizer kind {other:?}"))),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Tokenizer::WordPiece(t) => t.id(),
            Tokenizer::Bpe(t) => t.id(),
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Tokenizer::WordPiece(_) => Algorithm::WordPiece,
            Tokenizer::Bpe(_) => Algorithm::BytePairEncoding,
        }
    }

    pub fn vocab_len(&self) -> usize {
        match self {
            Tokenizer::WordPiece(t) => t.vocab_len(),
            Tokenizer::Bpe(t) => t.vocab_len(),
        }
    }

    pub fn tokenize(&self, word: &str) -> Vec<String> {
        match self {
            Tokenizer::WordPiece(t) => t.tokenize(word),
            Tokenizer::Bpe(t) => t.tokenize(word),
        }
    }

    /// Number of subword tokens of a name written in title case.
    pub fn token_length(&self, name: &str) -> usize {
        self.tokenize(&title_case(name)).len()
    }
}

impl From<WordPiece> for Tokenizer {
    fn from(t: WordPiece) -> Self {
        Tokenizer::WordPiece(t)
    }
}

impl From<Bpe> for Tokenizer {
    fn from(t: Bpe) -> Self {
        Tokenizer::Bpe(t)
    }
}

/// Uppercases each letter that follows a non-letter and lowercases the rest
/// (`mary-jo` → `Mary-Jo`, `O'NEIL` → `O'Neil`).
pub fn title_case(word: &str) -> String {
    let mut out = String::with_capacity(word.len());
    let mut previous_is_letter = false;
    for c in word.chars() {
        if c.is_alphabetic() {
            if previous_is_letter {
                out.extend(c.to_lowercase());
            } else {
                out.extend(c.to_uppercase());
            }
            previous_is_letter = true;
        } else {
            out.push(c);
            previous_is_letter = false;
        }
    }
    out
}
