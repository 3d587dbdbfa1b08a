//! Model-free scorers with known behaviour, used as null and positive
//! controls for the whole pipeline.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Scorer, ScoreRequest, WireResponse};
use crate::error::{Error, Result};
use crate::mcq::{word_set, WordOptions};
use crate::seed::stable_hash;
use crate::tokenize::title_case;

/// Three standard-normal logits keyed by `hash(seed, id)`. Knows nothing of
/// names beyond the id string.
#[derive(Clone, Debug)]
pub struct UnbiasedScorer {
    pub seed: u64,
    /// Drop the trailing `::name` segment of the id before hashing, so
    /// instances that differ only in the name get identical logits.
    pub mask_name: bool,
}

impl UnbiasedScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed, mask_name: false }
    }

    pub fn logits(&self, id: &str) -> [f64; 3] {
        let key = if self.mask_name {
            id.rsplit_once("::").map_or(id, |(head, _)| head)
        } else {
            id
        };
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[&self.seed.to_le_bytes(), key.as_bytes()]));
        [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]
    }
}

impl Scorer for UnbiasedScorer {
    fn id(&self) -> String {
        format!("synthetic:unbiased:{}{}", self.seed, if self.mask_name { ":masked" } else { "" })
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<WireResponse>> {
        Ok(requests
            .iter()
            .map(|r| WireResponse {
                id: r.id.clone(),
                logits: Some(self.logits(&r.id).to_vec()),
                error: None,
            })
            .collect())
    }
}

/// A planted word–name association.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub word: String,
    pub names: BTreeSet<String>,
    pub boost: f64,
}

/// The unbiased scorer plus boosts: a choice whose word set contains an
/// association's word gets the boost when one of the association's names
/// appears in the context as a whole word.
#[derive(Clone, Debug)]
pub struct BiasedScorer {
    base: UnbiasedScorer,
    associations: Vec<Association>,
    words: WordOptions,
}

impl BiasedScorer {
    pub fn new(base: UnbiasedScorer, associations: Vec<Association>) -> Result<Self> {
        if let Some(a) = associations.iter().find(|a| !a.boost.is_finite()) {
            return Err(Error::InvalidInput(format!("boost for {:?} is not finite", a.word)));
        }
        let associations = associations
            .into_iter()
            .map(|a| Association {
                word: a.word.to_lowercase(),
                names: a.names.iter().map(|n| title_case(n)).collect(),
                boost: a.boost,
            })
            .collect();
        Ok(Self {
            base,
            associations,
            words: WordOptions::default(),
        })
    }

    pub fn logits(&self, request: &ScoreRequest) -> [f64; 3] {
        let mut logits = self.base.logits(&request.id);
        let active: Vec<&Association> = self
            .associations
            .iter()
            .filter(|a| a.boost != 0.0 && a.names.iter().any(|n| contains_whole_word(&request.context, n)))
            .collect();
        if active.is_empty() {
            return logits;
        }
        for (j, choice) in request.choices.iter().enumerate() {
            let bag = word_set(choice, &self.words);
            for a in &active {
                if bag.binary_search(&a.word).is_ok() {
                    logits[j] += a.boost;
                }
            }
        }
        logits
    }
}

impl Scorer for BiasedScorer {
    fn id(&self) -> String {
        format!("synthetic:biased:{}:{}", self.base.seed, self.associations.len())
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<WireResponse>> {
        Ok(requests
            .iter()
            .map(|r| WireResponse {
                id: r.id.clone(),
                logits: Some(self.logits(r).to_vec()),
                error: None,
            })
            .collect())
    }
}

/// Same logits for every request.
#[derive(Clone, Debug, Default)]
pub struct ConstantScorer {
    pub logits: [f64; 3],
}

impl Scorer for ConstantScorer {
    fn id(&self) -> String {
        format!("synthetic:constant:{:?}", self.logits)
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<WireResponse>> {
        Ok(requests
            .iter()
            .map(|r| WireResponse {
                id: r.id.clone(),
                logits: Some(self.logits.to_vec()),
                error: None,
            })
            .collect())
    }
}

/// Case-sensitive match of `word` bounded by non-alphanumerics.
pub fn contains_whole_word(text: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    text.match_indices(word).any(|(i, _)| {
        !text[..i].chars().next_back().is_some_and(char::is_alphanumeric)
            && !text[i + word.len()..].chars().next().is_some_and(char::is_alphanumeric)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::argmax;

    fn request(id: &str, context: &str, choices: [&str; 3]) -> ScoreRequest {
        ScoreRequest {
            id: id.into(),
            context: context.into(),
            question: "How would others describe them?".into(),
            choices: choices.map(String::from),
        }
    }

    #[test]
    fn unbiased_is_deterministic() {
        let s = UnbiasedScorer::new(3);
        assert_eq!(s.logits("m::1::ann"), s.logits("m::1::ann"));
        assert_ne!(s.logits("m::1::ann"), UnbiasedScorer::new(4).logits("m::1::ann"));
    }

    #[test]
    fn masked_hash_ignores_name() {
        let s = UnbiasedScorer { seed: 3, mask_name: true };
        assert_eq!(s.logits("m::1::ann"), s.logits("m::1::nichelle"));
        assert_ne!(UnbiasedScorer::new(3).logits("m::1::ann"), UnbiasedScorer::new(3).logits("m::1::nichelle"));
    }

    #[test]
    fn unbiased_choices_roughly_uniform() {
        let s = UnbiasedScorer::new(11);
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            counts[argmax(&s.logits(&format!("q::{i}::n")))] += 1;
        }
        for c in counts {
            let share = c as f64 / 10_000.0;
            assert!((share - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    fn violent_for(names: &[&str], boost: f64) -> BiasedScorer {
        BiasedScorer::new(
            UnbiasedScorer::new(1),
            vec![Association {
                word: "violent".into(),
                names: names.iter().map(|n| n.to_string()).collect(),
                boost,
            }],
        )
        .unwrap()
    }

    #[test]
    fn biased_prefers_distractor_for_associated_names_only() {
        let scorer = violent_for(&["nichelle"], 5.0);
        let base = UnbiasedScorer::new(1);
        let mut flipped = 0;
        for i in 0..200 {
            let id = format!("q::{i}::x");
            let with = request(&id, "Nichelle made a wish.", ["a quiet person", "a violent person", "tired"]);
            let without = request(&id, "Kai made a wish.", ["a quiet person", "a violent person", "tired"]);
            assert_eq!(scorer.logits(&without), base.logits(&id));
            if argmax(&scorer.logits(&with)) == 1 {
                flipped += 1;
            }
        }
        assert!(flipped >= 195, "{flipped}");
    }

    #[test]
    fn zero_bias_is_identity() {
        let r = request("q::0::x", "Nichelle waited.", ["violent", "b", "c"]);
        let base = UnbiasedScorer::new(1).logits(&r.id);
        assert_eq!(violent_for(&["nichelle"], 0.0).logits(&r), base);
        assert_eq!(BiasedScorer::new(UnbiasedScorer::new(1), vec![]).unwrap().logits(&r), base);
    }

    #[test]
    fn non_finite_boost_rejected() {
        let a = Association {
            word: "x".into(),
            names: BTreeSet::new(),
            boost: f64::NAN,
        };
        assert!(BiasedScorer::new(UnbiasedScorer::new(1), vec![a]).is_err());
    }

    #[test]
    fn whole_word_matching() {
        assert!(contains_whole_word("Nichelle's mother", "Nichelle"));
        assert!(!contains_whole_word("Nichelles", "Nichelle"));
        assert!(!contains_whole_word("Ann", ""));
    }
}
