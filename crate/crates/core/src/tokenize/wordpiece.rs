//! Greedy longest-match-first WordPiece over a BERT-style `vocab.txt`.

use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct WordPieceOptions {
    /// `None` detects `##` from the vocabulary.
    pub continuation_marker: Option<String>,
    pub unknown_token: String,
    /// `None` infers an uncased vocabulary when no regular token has ASCII uppercase letters.
    pub lowercase: Option<bool>,
    pub max_chars_per_word: usize,
}

impl Default for WordPieceOptions {
    fn default() -> Self {
        Self {
            continuation_marker: None,
            unknown_token: "[UNK]".to_string(),
            lowercase: None,
            max_chars_per_word: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WordPiece {
    id: String,
    vocab: HashMap<String, u32>,
    marker: String,
    unknown: String,
    lowercase: bool,
    max_chars: usize,
}

pub fn load_wordpiece(path: impl AsRef<Path>, options: WordPieceOptions) -> Result<WordPiece> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = format!(
        "wordpiece:{}",
        path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned())
    );
    WordPiece::from_tokens(id, text.lines(), options)
}

impl WordPiece {
    /// Builds a tokenizer whose ids are line numbers (0-based).
    pub fn from_tokens<'a>(
        id: impl Into<String>,
        tokens: impl IntoIterator<Item = &'a str>,
        options: WordPieceOptions,
    ) -> Result<Self> {
        let mut vocab = HashMap::new();
        for (i, token) in tokens.into_iter().enumerate() {
            let token = token.trim_end_matches('\r');
            vocab.entry(token.to_string()).or_insert(i as u32);
        }
        if vocab.is_empty() {
            return Err(Error::Tokenizer("empty WordPiece vocabulary".into()));
        }
        if !vocab.contains_key(&options.unknown_token) {
            return Err(Error::Tokenizer(format!(
                "unknown token {:?} missing from vocabulary",
                options.unknown_token
            )));
        }
        let marker = options.continuation_marker.unwrap_or_else(|| "##".to_string());
        let lowercase = options.lowercase.unwrap_or_else(|| {
            !vocab
                .keys()
                .filter(|t| !is_special(t))
                .any(|t| t.bytes().any(|b| b.is_ascii_uppercase()))
        });
        Ok(Self {
            id: id.into(),
            vocab,
            marker,
            unknown: options.unknown_token,
            lowercase,
            max_chars: options.max_chars_per_word,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn continuation_marker(&self) -> &str {
        &self.marker
    }

    pub fn unknown_token(&self) -> &str {
        &self.unknown
    }

    pub fn is_lowercase(&self) -> bool {
        self.lowercase
    }

    /// The text the vocabulary is matched against: lowercased and accent
    /// stripped for uncased vocabularies.
    pub fn normalize(&self, text: &str) -> String {
        if self.lowercase {
            text.to_lowercase()
                .nfd()
                .filter(|c| !is_combining_mark(*c))
                .collect()
        } else {
            text.to_string()
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let normalized = self.normalize(text);
        let mut out = Vec::new();
        for piece in split_basic(&normalized) {
            self.wordpiece(piece, &mut out);
        }
        out
    }

    fn wordpiece(&self, word: &str, out: &mut Vec<String>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > self.max_chars {
            out.push(self.unknown.clone());
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let begin = chars[start].0;
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let stop = chars.get(end).map_or(word.len(), |c| c.0);
                let candidate = if start > 0 {
                    format!("{}{}", self.marker, &word[begin..stop])
                } else {
                    word[begin..stop].to_string()
                };
                if self.vocab.contains_key(&candidate) {
                    found = Some(candidate);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(piece) => {
                    pieces.push(piece);
                    start = end;
                }
                None => {
                    out.push(self.unknown.clone());
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

fn is_special(token: &str) -> bool {
    token.starts_with('[') && token.ends_with(']')
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32, 0x2000..=0x206F | 0x3000..=0x303F | 0xFF01..=0xFF0F | 0x00A1..=0x00BF)
}

/// Whitespace and punctuation split, each punctuation char its own piece.
fn split_basic(text: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || c.is_control() || is_punctuation(c) {
            if let Some(s) = start.take() {
                pieces.push(&text[s..i]);
            }
            if is_punctuation(c) {
                pieces.push(&text[i..i + c.len_utf8()]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        pieces.push(&text[s..]);
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> WordPiece {
        let vocab = ["[UNK]", "nancy", "n", "##ancy", "##a", "k"];
        WordPiece::from_tokens("fixture", vocab, WordPieceOptions::default()).unwrap()
    }

    #[test]
    fn vocab_size_is_line_count() {
        assert_eq!(fixture().vocab_len(), 6);
    }

    #[test]
    fn missing_unknown_token_is_error() {
        let err = WordPiece::from_tokens("x", ["a", "b"], WordPieceOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Tokenizer(_)));
    }

    #[test]
    fn empty_vocab_is_error() {
        let err = WordPiece::from_tokens("x", [], WordPieceOptions::default()).unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn greedy_longest_match() {
        let wp = fixture();
        assert_eq!(wp.tokenize("Nancy"), vec!["nancy"]);
        assert_eq!(wp.tokenize("Na"), vec!["n", "##a"]);
        assert_eq!(wp.tokenize("k"), vec!["k"]);
    }

    #[test]
    fn unmatched_character_becomes_unknown() {
        assert_eq!(fixture().tokenize("Nz"), vec!["[UNK]"]);
    }

    #[test]
    fn accents_stripped_for_uncased() {
        let wp = WordPiece::from_tokens("x", ["[UNK]", "jose"], WordPieceOptions::default()).unwrap();
        assert!(wp.is_lowercase());
        assert_eq!(wp.tokenize("José"), vec!["jose"]);
    }

    #[test]
    fn punctuation_splits() {
        let wp = WordPiece::from_tokens("x", ["[UNK]", "mary", "-", "jo"], WordPieceOptions::default())
            .unwrap();
        assert_eq!(wp.tokenize("Mary-Jo"), vec!["mary", "-", "jo"]);
    }
}
