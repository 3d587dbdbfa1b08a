//! Lazy Cartesian assembly of (question, name, distractor) instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{replace_whole_words, substitute_name, word_set, DistractorPool, Mcq, WordOptions};
use crate::error::{Error, Result};
use crate::seed::stable_hash;
use crate::tokenize::title_case;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    /// `{mcq_id}::{pool_index}::{name}`.
    pub id: String,
    pub mcq_id: String,
    pub name: String,
    /// Distractor text as shown, with the name substituted.
    pub distractor: String,
    /// Word set of `distractor`.
    pub words: Vec<String>,
    pub distractor_index: usize,
    pub correct_index: usize,
    pub context: String,
    pub question: String,
    pub choices: [String; 3],
}

/// Which incorrect slot a distractor replaces. Hashes the question id and
/// the name-neutral distractor, so every name sees the same layout.
pub fn distractor_position(mcq_id: &str, distractor: &str, correct_index: usize) -> usize {
    let slots: Vec<usize> = (0..3).filter(|&i| i != correct_index).collect();
    let h = stable_hash(&[mcq_id.as_bytes(), distractor.as_bytes()]);
    slots[(h % 2) as usize]
}

pub fn eval_set_size(mcqs: &[Mcq], names: &[String], pools: &BTreeMap<String, DistractorPool>) -> usize {
    mcqs.iter()
        .map(|m| names.len() * pools.get(&m.id).map_or(0, DistractorPool::len))
        .sum()
}

/// Every (question, name, distractor) combination, question-major. The
/// first-mentioned name of each question is the one substituted.
pub fn assemble_eval_set<'a>(
    mcqs: &'a [Mcq],
    names: &'a [String],
    pools: &'a BTreeMap<String, DistractorPool>,
    options: &'a WordOptions,
) -> Result<impl Iterator<Item = EvalInstance> + Send + 'a> {
    for mcq in mcqs {
        if !pools.contains_key(&mcq.id) {
            return Err(Error::InvalidInput(format!("no distractor pool for mcq {}", mcq.id)));
        }
        if mcq.name_spans.is_empty() {
            return Err(Error::InvalidInput(format!("mcq {} has no name spans", mcq.id)));
        }
    }
    Ok(mcqs.iter().flat_map(move |mcq| {
        let pool = &pools[&mcq.id];
        let canonical = mcq.canonical_names()[0].to_string();
        names.iter().flat_map(move |name| {
            let shown = title_case(name);
            let substituted = substitute_name(mcq, &canonical, &shown).expect("canonical from spans");
            let map = BTreeMap::from([(canonical.clone(), shown)]);
            pool.distractors.iter().enumerate().map(move |(i, neutral)| {
                let distractor = replace_whole_words(neutral, &map);
                let position = distractor_position(&mcq.id, neutral, mcq.correct_index);
                let mut choices = substituted.choices.clone();
                choices[position] = distractor.clone();
                EvalInstance {
                    id: format!("{}::{i}::{name}", mcq.id),
                    mcq_id: mcq.id.clone(),
                    name: name.clone(),
                    words: word_set(&distractor, options),
                    distractor,
                    distractor_index: position,
                    correct_index: mcq.correct_index,
                    context: substituted.context.clone(),
                    question: substituted.question.clone(),
                    choices,
                }
            })
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcq::{spot_names, NameLexicon};
    use proptest::prelude::*;

    fn fixture(n_distractors: usize) -> (Vec<Mcq>, BTreeMap<String, DistractorPool>) {
        let mcq = Mcq::new("m", "Kai waited.", "How is Kai?", ["patient", "b", "c"], 0).unwrap();
        let mcq = spot_names(&mcq, &NameLexicon::new(["kai"]).unwrap());
        let pool = DistractorPool {
            source_mcq_id: "m".into(),
            distractors: (0..n_distractors).map(|i| format!("word{i} person.")).collect(),
            provenance: BTreeMap::new(),
        };
        (vec![mcq], BTreeMap::from([("m".to_string(), pool)]))
    }

    fn names() -> Vec<String> {
        vec!["nichelle".into(), "bo".into()]
    }

    #[test]
    fn cartesian_count() {
        let (mcqs, pools) = fixture(3);
        let names = names();
        let options = WordOptions::default();
        let all: Vec<_> = assemble_eval_set(&mcqs, &names, &pools, &options).unwrap().collect();
        assert_eq!(all.len(), 6);
        assert_eq!(eval_set_size(&mcqs, &names, &pools), 6);
        let first = &all[0];
        assert_eq!(first.context, "Nichelle waited.");
        assert_eq!(first.choices[first.distractor_index], "word0 person.");
        assert_eq!(first.choices[first.correct_index], "patient");
        assert_eq!(first.words, vec![".", "person", "word0"]);
        assert_eq!(first.id, "m::0::nichelle");
    }

    #[test]
    fn empty_pool_no_instances() {
        let (mcqs, pools) = fixture(0);
        let names = names();
        let options = WordOptions::default();
        assert_eq!(assemble_eval_set(&mcqs, &names, &pools, &options).unwrap().count(), 0);
    }

    #[test]
    fn deterministic_and_position_matched_across_names() {
        let (mcqs, pools) = fixture(20);
        let names = names();
        let options = WordOptions::default();
        let a: Vec<_> = assemble_eval_set(&mcqs, &names, &pools, &options).unwrap().collect();
        let b: Vec<_> = assemble_eval_set(&mcqs, &names, &pools, &options).unwrap().collect();
        assert_eq!(a, b);
        for (x, y) in a[..20].iter().zip(&a[20..]) {
            assert_eq!(x.distractor_index, y.distractor_index);
        }
        let used: std::collections::BTreeSet<usize> = a.iter().map(|i| i.distractor_index).collect();
        assert_eq!(used, [1, 2].into());
    }

    #[test]
    fn missing_pool_or_spans_is_error() {
        let (mcqs, _) = fixture(1);
        let names = names();
        let options = WordOptions::default();
        assert!(assemble_eval_set(&mcqs, &names, &BTreeMap::new(), &options).is_err());
    }

    proptest! {
        #[test]
        fn positions_distinct_from_correct(id in "[a-z0-9]{1,8}", d in ".{0,20}", correct in 0usize..3) {
            let p = distractor_position(&id, &d, correct);
            prop_assert!(p < 3 && p != correct);
        }

        #[test]
        fn cardinality_matches(n_names in 0usize..5, n_d in 0usize..6) {
            let (mcqs, pools) = fixture(n_d);
            let names: Vec<String> = (0..n_names).map(|i| format!("name{i}")).collect();
            let options = WordOptions::default();
            let count = assemble_eval_set(&mcqs, &names, &pools, &options).unwrap().count();
            prop_assert_eq!(count, n_names * n_d);
            prop_assert_eq!(count, eval_set_size(&mcqs, &names, &pools));
        }
    }
}
