//! The bag-of-words view of a distractor used to index success rates.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Word extraction rule. Recorded in run metadata because the success-rate
/// vocabulary depends on it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordOptions {
    /// Split trailing clitics such as `'s` off a word (`nichelle's` → `nichelle`, `'s`).
    pub detach_clitics: bool,
    pub clitics: Vec<String>,
}

impl Default for WordOptions {
    fn default() -> Self {
        Self {
            detach_clitics: true,
            clitics: ["'s", "'re", "'ve", "'ll", "'d", "'m"].map(String::from).to_vec(),
        }
    }
}

/// Splits on whitespace, detaches leading and trailing punctuation one
/// character per token, optionally splits clitics, and lowercases.
pub fn extract_words(text: &str, options: &WordOptions) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        let core_start = lower
            .char_indices()
            .find(|(_, c)| c.is_alphanumeric())
            .map_or(lower.len(), |(i, _)| i);
        let core_end = lower
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_alphanumeric())
            .map_or(core_start, |(i, c)| i + c.len_utf8())
            .max(core_start);

        out.extend(lower[..core_start].chars().map(String::from));
        let mut core = &lower[core_start..core_end];
        let mut clitic = None;
        if options.detach_clitics {
            if let Some(c) = options
                .clitics
                .iter()
                .find(|c| core.len() > c.len() && core.ends_with(c.as_str()))
            {
                clitic = Some(c.clone());
                core = &core[..core.len() - c.len()];
            }
        }
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(clitic);
        out.extend(lower[core_end..].chars().map(String::from));
    }
    out
}

/// Distinct words, sorted.
pub fn word_set(text: &str, options: &WordOptions) -> Vec<String> {
    let set: BTreeSet<String> = extract_words(text, options).into_iter().collect();
    set.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(text: &str) -> Vec<String> {
        extract_words(text, &WordOptions::default())
    }

    #[test]
    fn trailing_period_detached() {
        assert_eq!(words("a violent person."), vec!["a", "violent", "person", "."]);
    }

    #[test]
    fn empty_text() {
        assert!(words("").is_empty());
        assert!(words("   ").is_empty());
    }

    #[test]
    fn clitic_detached() {
        assert_eq!(words("Nichelle's"), vec!["nichelle", "'s"]);
        let keep = WordOptions {
            detach_clitics: false,
            ..WordOptions::default()
        };
        assert_eq!(extract_words("Nichelle's", &keep), vec!["nichelle's"]);
    }

    #[test]
    fn leading_and_internal_punctuation() {
        assert_eq!(words("(well-known)!"), vec!["(", "well-known", ")", "!"]);
        assert_eq!(words("..."), vec![".", ".", "."]);
        assert_eq!(words("\"Kai's.\""), vec!["\"", "kai", "'s", ".", "\""]);
    }

    #[test]
    fn set_is_sorted_and_distinct() {
        assert_eq!(word_set("the cat the dog.", &WordOptions::default()), vec![".", "cat", "dog", "the"]);
    }
}
