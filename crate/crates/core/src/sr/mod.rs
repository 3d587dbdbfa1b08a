//! Success-rate vectors and the membership tests run on them.

mod heatmap;
mod membership;

pub use heatmap::{
    default_pair_plan, heatmap_csv, heatmap_svg, pairwise_heatmap, significance_flag, HeatmapCell,
    UNAVAILABLE,
};
pub use membership::{
    centroid_members, membership_accuracy, membership_correct, permutation_test, MembershipResult,
    CENTROID_SAMPLE,
};

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::names::{SubgroupKey, SubgroupSet};
use crate::scoring::ScoreRecord;

/// Words appearing in at least this many distractor instances enter the vocabulary.
pub const DEFAULT_VOCAB_THRESHOLD: u64 = 1000;

/// Number of distractor instances whose word set contains each word.
pub fn count_words<'a, I, W>(bags: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = W>,
    W: IntoIterator<Item = &'a String>,
{
    let mut counts = BTreeMap::new();
    for bag in bags {
        for word in bag {
            *counts.entry(word.clone()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrVocabulary {
    /// Sorted lexicographically.
    pub words: Vec<String>,
    pub threshold: u64,
    pub counts: BTreeMap<String, u64>,
}

impl SrVocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn build_vocabulary(counts: &BTreeMap<String, u64>, threshold: u64) -> Result<SrVocabulary> {
    let kept: BTreeMap<String, u64> = counts
        .iter()
        .filter(|(_, &c)| c >= threshold)
        .map(|(w, &c)| (w.clone(), c))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary { threshold });
    }
    Ok(SrVocabulary {
        words: kept.keys().cloned().collect(),
        threshold,
        counts: kept,
    })
}

/// Exact success count over trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub successes: u64,
    pub trials: u64,
}

impl SuccessRate {
    /// `None` when there were no trials.
    pub fn rate(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.successes as f64 / self.trials as f64)
    }

    pub fn add(&mut self, success: bool) {
        self.trials += 1;
        self.successes += u64::from(success);
    }

    pub fn merge(&mut self, other: SuccessRate) {
        self.trials += other.trials;
        self.successes += other.successes;
    }
}

/// SR(word, name): the fraction of instances with `name` in the context and
/// `word` in the distractor where the scorer picked the distractor.
pub fn success_rate<'a>(records: impl IntoIterator<Item = &'a ScoreRecord>, word: &str, name: &str) -> SuccessRate {
    let mut sr = SuccessRate::default();
    for r in records {
        if r.name == name && r.words.iter().any(|w| w == word) {
            sr.add(r.fooled());
        }
    }
    sr
}

/// Streaming (successes, trials) accumulation over a fixed name list and
/// vocabulary. Accumulators over shards merge associatively.
#[derive(Clone, Debug)]
pub struct SrAccumulator {
    names: Vec<String>,
    vocabulary: SrVocabulary,
    name_index: HashMap<String, usize>,
    word_index: HashMap<String, usize>,
    cells: Vec<SuccessRate>,
    ignored: u64,
}

impl SrAccumulator {
    pub fn new(names: Vec<String>, vocabulary: SrVocabulary) -> Self {
        let name_index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let word_index = vocabulary.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let cells = vec![SuccessRate::default(); names.len() * vocabulary.len()];
        Self {
            names,
            vocabulary,
            name_index,
            word_index,
            cells,
            ignored: 0,
        }
    }

    pub fn add(&mut self, record: &ScoreRecord) {
        let Some(&row) = self.name_index.get(&record.name) else {
            self.ignored += 1;
            return;
        };
        let width = self.vocabulary.len();
        let fooled = record.fooled();
        for word in &record.words {
            if let Some(&col) = self.word_index.get(word) {
                self.cells[row * width + col].add(fooled);
            }
        }
    }

    pub fn merge(&mut self, other: &SrAccumulator) -> Result<()> {
        if self.names != other.names || self.vocabulary.words != other.vocabulary.words {
            return Err(Error::InvalidInput("cannot merge accumulators over different shapes".into()));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(*b);
        }
        self.ignored += other.ignored;
        Ok(())
    }

    /// Records whose name was not in the name list.
    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn finish(self) -> SrMatrix {
        SrMatrix {
            names: self.names,
            vocabulary: self.vocabulary,
            cells: self.cells,
        }
    }
}

pub fn build_sr_matrix<'a>(
    records: impl IntoIterator<Item = &'a ScoreRecord>,
    vocabulary: SrVocabulary,
    names: Vec<String>,
) -> SrMatrix {
    let mut acc = SrAccumulator::new(names, vocabulary);
    for r in records {
        acc.add(r);
    }
    acc.finish()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SrMatrix {
    pub names: Vec<String>,
    pub vocabulary: SrVocabulary,
    /// Row-major `names × words`.
    pub cells: Vec<SuccessRate>,
}

impl SrMatrix {
    pub fn cell(&self, name: usize, word: usize) -> SuccessRate {
        self.cells[name * self.vocabulary.len() + word]
    }

    /// Names with no trials at all; excluded from downstream tests.
    pub fn empty_rows(&self) -> Vec<&str> {
        let w = self.vocabulary.len();
        self.names
            .iter()
            .enumerate()
            .filter(|(i, _)| self.cells[i * w..(i + 1) * w].iter().all(|c| c.trials == 0))
            .map(|(_, n)| n.as_str())
            .collect()
    }

    pub fn to_table(&self) -> SrTable {
        SrTable {
            names: self.names.clone(),
            words: self.vocabulary.words.clone(),
            values: self.cells.iter().map(SuccessRate::rate).collect(),
            annotations: vec![None; self.names.len()],
        }
    }

    /// `name,word,successes,trials` for every cell with trials.
    pub fn support_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "word", "successes", "trials"]).expect("in-memory write");
        for (i, name) in self.names.iter().enumerate() {
            for (j, word) in self.vocabulary.words.iter().enumerate() {
                let c = self.cell(i, j);
                if c.trials > 0 {
                    w.write_record([name, word, &c.successes.to_string(), &c.trials.to_string()])
                        .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Per-name metadata carried alongside exported vectors.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub race: String,
    pub gender: String,
    pub token_length: String,
    pub frequency: String,
}

const META_COLUMNS: [&str; 5] = ["name", "race", "gender", "token_length", "frequency"];

/// Success-rate values without their support, as exported and re-imported.
#[derive(Clone, Debug, PartialEq)]
pub struct SrTable {
    pub names: Vec<String>,
    pub words: Vec<String>,
    /// Row-major; `None` marks a cell without trials.
    pub values: Vec<Option<f64>>,
    pub annotations: Vec<Option<Annotation>>,
}

impl SrTable {
    pub fn row(&self, i: usize) -> &[Option<f64>] {
        let w = self.words.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Whether the row has at least one defined cell.
    pub fn has_data(&self, i: usize) -> bool {
        self.row(i).iter().any(Option::is_some)
    }

    /// Mean over defined cells of each column; 0 for a column with none.
    pub fn column_means(&self) -> Vec<f64> {
        let w = self.words.len();
        let mut sums = vec![(0.0f64, 0u64); w];
        for (k, v) in self.values.iter().enumerate() {
            if let Some(v) = v {
                sums[k % w].0 += v;
                sums[k % w].1 += 1;
            }
        }
        sums.into_iter().map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 }).collect()
    }

    /// Row `i` with missing cells replaced by the column means.
    pub fn imputed_row(&self, i: usize, means: &[f64]) -> Vec<f64> {
        self.row(i).iter().zip(means).map(|(v, m)| v.unwrap_or(*m)).collect()
    }

    /// Imputed vectors of the listed names that are present and have data,
    /// in list order.
    pub fn group_vectors(&self, members: &[String], means: &[f64]) -> Vec<Vec<f64>> {
        let index: HashMap<&str, usize> = self.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        members
            .iter()
            .filter_map(|n| index.get(n.as_str()).copied())
            .filter(|&i| self.has_data(i))
            .map(|i| self.imputed_row(i, means))
            .collect()
    }

    /// Subgroups rebuilt from the race, gender and token length annotations.
    /// Rows without a complete annotation are skipped.
    pub fn subgroups_from_annotations(&self) -> Result<SubgroupSet> {
        let mut groups: BTreeMap<SubgroupKey, Vec<String>> = BTreeMap::new();
        for (name, a) in self.names.iter().zip(&self.annotations) {
            let Some(a) = a else { continue };
            if a.race.is_empty() || a.gender.is_empty() || a.token_length.is_empty() {
                continue;
            }
            let key: SubgroupKey = format!("{}|{}|{}", a.race, a.gender, a.token_length).parse()?;
            groups.entry(key).or_default().push(name.clone());
        }
        Ok(SubgroupSet {
            tokenizer_id: String::new(),
            seed: 0,
            cap: groups.values().map(Vec::len).max().unwrap_or(0),
            groups,
        })
    }

    /// Writes `name,race,gender,token_length,frequency,<words...>`. Missing
    /// cells are empty fields; values use the shortest round-trip format.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<&str> = META_COLUMNS.iter().copied().chain(self.words.iter().map(String::as_str)).collect();
        w.write_record(&header)?;
        for (i, name) in self.names.iter().enumerate() {
            let a = self.annotations[i].clone().unwrap_or_default();
            let mut row = vec![name.clone(), a.race, a.gender, a.token_length, a.frequency];
            row.extend(self.row(i).iter().map(|v| v.map_or_else(String::new, |x| format!("{x}"))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the export format; `#` lines are comments.
    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < META_COLUMNS.len() || header.iter().take(5).ne(META_COLUMNS) {
            return Err(Error::InvalidInput(format!(
                "SR table header must start with {}",
                META_COLUMNS.join(",")
            )));
        }
        let words: Vec<String> = header.iter().skip(5).map(String::from).collect();
        let mut table = SrTable {
            names: Vec::new(),
            words,
            values: Vec::new(),
            annotations: Vec::new(),
        };
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let line = i + 2;
            if row.len() != header.len() {
                return Err(Error::Parse {
                    context: "SR table".into(),
                    line,
                    message: format!("expected {} fields, found {}", header.len(), row.len()),
                });
            }
            table.names.push(row[0].to_string());
            let a = Annotation {
                race: row[1].to_string(),
                gender: row[2].to_string(),
                token_length: row[3].to_string(),
                frequency: row[4].to_string(),
            };
            table.annotations.push((a != Annotation::default()).then_some(a));
            for field in row.iter().skip(5) {
                let value = if field.is_empty() {
                    None
                } else {
                    let v: f64 = field.parse().map_err(|_| Error::Parse {
                        context: "SR table".into(),
                        line,
                        message: format!("bad value {field:?}"),
                    })?;
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Parse {
                            context: "SR table".into(),
                            line,
                            message: format!("rate {v} outside [0,1]"),
                        });
                    }
                    Some(v)
                };
                table.values.push(value);
            }
        }
        Ok(table)
    }
}
