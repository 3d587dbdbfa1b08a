//! Correlation between name demographics and tokenization length.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::names::{Gender, NameRecord, Race};

use super::Tokenizer;

/// Token lengths of four or more share the last bucket.
pub const LENGTH_BUCKETS: [&str; 4] = ["1", "2", "3", "4+"];

pub fn length_bucket(token_length: usize) -> usize {
    token_length.clamp(1, 4) - 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attribute {
    Race,
    Gender,
}

/// `AGivenB` is P(length | attribute); `BGivenA` is P(attribute | length).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    AGivenB,
    BGivenA,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Weighting {
    #[default]
    ByName,
    ByCount,
}

/// Conditional distribution table. Each row is one conditioning value and
/// sums to one; only conditioning values with nonzero mass get a row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMatrix {
    pub attribute: Attribute,
    pub direction: Direction,
    pub weighting: Weighting,
    pub given: Vec<String>,
    pub outcome: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

impl ConditionalMatrix {
    /// P(outcome | given), `None` when either label is absent.
    pub fn get(&self, outcome: &str, given: &str) -> Option<f64> {
        let row = self.given.iter().position(|g| g == given)?;
        let col = self.outcome.iter().position(|o| o == outcome)?;
        Some(self.probs[row][col])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("given");
        for label in &self.outcome {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (label, row) in self.given.iter().zip(&self.probs) {
            out.push_str(label);
            for p in row {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    }
}

fn attribute_labels(attribute: Attribute) -> Vec<&'static str> {
    match attribute {
        Attribute::Race => Race::ALL.iter().map(|r| r.label()).collect(),
        Attribute::Gender => Gender::BINARY.iter().map(|g| g.label()).collect(),
    }
}

fn attribute_of(record: &NameRecord, attribute: Attribute) -> Option<usize> {
    match attribute {
        Attribute::Race => record.race.map(|r| Race::ALL.iter().position(|&x| x == r).expect("race")),
        Attribute::Gender => Gender::BINARY.iter().position(|&g| g == record.gender),
    }
}

pub fn conditional_stats(
    records: &[NameRecord],
    tokenizer: &Tokenizer,
    attribute: Attribute,
    direction: Direction,
    weighting: Weighting,
) -> Result<ConditionalMatrix> {
    let labels = attribute_labels(attribute);
    // joint[length bucket][attribute]
    let mut joint = vec![vec![0.0f64; labels.len()]; LENGTH_BUCKETS.len()];
    let mut total = 0.0;
    for record in records {
        let Some(attr) = attribute_of(record, attribute) else { continue };
        let weight = match weighting {
            Weighting::ByName => 1.0,
            Weighting::ByCount => record.count as f64,
        };
        joint[length_bucket(tokenizer.token_length(&record.name))][attr] += weight;
        total += weight;
    }
    if total == 0.0 {
        return Err(Error::InvalidInput(
            "no records with the requested attribute; distribution undefined".into(),
        ));
    }

    let (given_labels, outcome_labels, cell): (Vec<String>, Vec<String>, Box<dyn Fn(usize, usize) -> f64>) =
        match direction {
            Direction::AGivenB => (
                labels.iter().map(|s| s.to_string()).collect(),
                LENGTH_BUCKETS.iter().map(|s| s.to_string()).collect(),
                Box::new(|given, outcome| joint[outcome][given]),
            ),
            Direction::BGivenA => (
                LENGTH_BUCKETS.iter().map(|s| s.to_string()).collect(),
                labels.iter().map(|s| s.to_string()).collect(),
                Box::new(|given, outcome| joint[given][outcome]),
            ),
        };

    let mut given = Vec::new();
    let mut probs = Vec::new();
    for (g, label) in given_labels.iter().enumerate() {
        let row: Vec<f64> = (0..outcome_labels.len()).map(|o| cell(g, o)).collect();
        let mass: f64 = row.iter().sum();
        if mass > 0.0 {
            given.push(label.clone());
            probs.push(row.into_iter().map(|v| v / mass).collect());
        }
    }
    Ok(ConditionalMatrix {
        attribute,
        direction,
        weighting,
        given,
        outcome: outcome_labels,
        probs,
    })
}

/// Whole-word, case-insensitive occurrence counts of `names` in a text
/// stream, read line by line. Keys are lowercased names; absent names map to 0.
pub fn corpus_frequency(names: &[String], corpus: impl BufRead) -> Result<BTreeMap<String, u64>> {
    let mut counts: BTreeMap<String, u64> = names.iter().map(|n| (n.to_lowercase(), 0)).collect();
    let (simple, compound): (Vec<String>, Vec<String>) = counts
        .keys()
        .cloned()
        .partition(|n| n.chars().all(char::is_alphanumeric));
    let simple: HashMap<String, ()> = simple.into_iter().map(|n| (n, ())).collect();

    for line in corpus.lines() {
        let line = line?.to_lowercase();
        for word in line
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            if simple.contains_key(word) {
                *counts.get_mut(word).expect("seeded") += 1;
            }
        }
        for name in &compound {
            let n = count_whole_word(&line, name);
            if n > 0 {
                *counts.get_mut(name).expect("seeded") += n;
            }
        }
    }
    Ok(counts)
}

fn count_whole_word(haystack: &str, needle: &str) -> u64 {
    if needle.is_empty() {
        return 0;
    }
    let mut n = 0;
    let mut from = 0;
    while let Some(at) = haystack[from..].find(needle) {
        let start = from + at;
        let end = start + needle.len();
        let before = haystack[..start].chars().next_back();
        let after = haystack[end..].chars().next();
        if !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric) {
            n += 1;
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    n
}

/// Mean character count per race. Races without names are absent.
pub fn mean_char_length<'a>(names: impl IntoIterator<Item = (Race, &'a str)>) -> BTreeMap<Race, f64> {
    let mut acc: BTreeMap<Race, (usize, usize)> = BTreeMap::new();
    for (race, name) in names {
        let entry = acc.entry(race).or_default();
        entry.0 += name.chars().count();
        entry.1 += 1;
    }
    acc.into_iter()
        .map(|(race, (chars, n))| (race, chars as f64 / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::names::RaceShares;
    use crate::tokenize::{WordPiece, WordPieceOptions};

    fn tokenizer() -> Tokenizer {
        WordPiece::from_tokens(
            "t",
            ["[UNK]", "ann", "bo", "cy", "d", "##e", "##a"],
            WordPieceOptions::default(),
        )
        .unwrap()
        .into()
    }

    fn rec(name: &str, race: Race, gender: Gender, count: u64) -> NameRecord {
        NameRecord {
            race: Some(race),
            gender,
            ..NameRecord::new(name, RaceShares::default(), count)
        }
    }

    #[test]
    fn degenerate_single_tokens() {
        let records = vec![
            rec("ann", Race::White, Gender::Female, 1),
            rec("bo", Race::Asian, Gender::Male, 1),
        ];
        let m = conditional_stats(&records, &tokenizer(), Attribute::Race, Direction::AGivenB, Weighting::ByName)
            .unwrap();
        assert_eq!(m.given, vec!["White", "Asian"]);
        assert_eq!(m.get("1", "White"), Some(1.0));
        assert_eq!(m.get("1", "Asian"), Some(1.0));
    }

    #[test]
    fn empty_records_error() {
        let err = conditional_stats(&[], &tokenizer(), Attribute::Gender, Direction::AGivenB, Weighting::ByName);
        assert!(err.is_err());
    }

    #[test]
    fn count_weighting() {
        let records = vec![
            rec("ann", Race::White, Gender::Female, 3),
            rec("de", Race::White, Gender::Female, 1),
        ];
        let m = conditional_stats(&records, &tokenizer(), Attribute::Gender, Direction::AGivenB, Weighting::ByCount)
            .unwrap();
        assert_eq!(m.get("1", "Female"), Some(0.75));
        assert_eq!(m.get("2", "Female"), Some(0.25));
    }

    #[test]
    fn frequency_whole_word() {
        let names = vec!["Nancy".to_string(), "Ann".to_string(), "Mary-Jo".to_string()];
        let corpus = "Nancy met Nancy.\nNancy's friend Annie met mary-jo and MARY-JO\n";
        let counts = corpus_frequency(&names, corpus.as_bytes()).unwrap();
        assert_eq!(counts["nancy"], 3);
        assert_eq!(counts["ann"], 0);
        assert_eq!(counts["mary-jo"], 2);
    }

    #[test]
    fn mean_lengths() {
        let means = mean_char_length([(Race::Asian, "kai"), (Race::Asian, "lin"), (Race::Black, "ab"), (Race::Black, "abcd")]);
        assert_eq!(means[&Race::Asian], 3.0);
        assert_eq!(means[&Race::Black], 3.0);
        assert!(!means.contains_key(&Race::White));
    }
}
