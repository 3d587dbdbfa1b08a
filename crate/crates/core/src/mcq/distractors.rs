//! Distractor providers and per-question distractor pools.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{replace_whole_words, substitute_name, Mcq};
use crate::error::{Error, Result};
use crate::tokenize::title_case;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorRequest {
    pub mcq_id: String,
    pub context: String,
    pub question: String,
    pub correct: String,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorResponse {
    pub distractors: Vec<String>,
}

pub trait DistractorProvider: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &DistractorRequest) -> Result<Vec<String>>;
}

/// Function words never swapped by the rule-based generator.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "by",
    "from", "as", "is", "are", "was", "were", "be", "been", "it", "its", "that", "this", "they",
    "them", "their", "he", "she", "his", "her", "him", "i", "you", "we", "not", "very", "so",
];

/// Swaps one content word of `correct` for a lexicon word. Candidates are
/// enumerated position-major (every lexicon word at the first content word,
/// then the second, ...) and the first `k` distinct ones are returned.
pub fn rule_based_distractors(
    correct: &str,
    attribute_lexicon: &[String],
    k: usize,
    stopwords: &[&str],
) -> Vec<String> {
    let tokens: Vec<&str> = correct.split(' ').collect();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (pos, token) in tokens.iter().enumerate() {
        let (lead, core, trail) = split_punctuation(token);
        if core.is_empty() || stopwords.contains(&core.to_lowercase().as_str()) {
            continue;
        }
        for word in attribute_lexicon {
            if out.len() == k {
                return out;
            }
            if word.eq_ignore_ascii_case(core) {
                continue;
            }
            let mut swapped = tokens.clone();
            let replacement = format!("{lead}{word}{trail}");
            swapped[pos] = &replacement;
            let candidate = swapped.join(" ");
            if candidate != correct && seen.insert(candidate.clone()) {
                out.push(candidate);
            }
        }
    }
    out.truncate(k);
    out
}

fn split_punctuation(token: &str) -> (&str, &str, &str) {
    let start = token.find(char::is_alphanumeric).unwrap_or(token.len());
    let end = token
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map_or(start, |(i, c)| i + c.len_utf8())
        .max(start);
    (&token[..start], &token[start..end], &token[end..])
}

/// Deterministic swap generator; ignores the name.
#[derive(Clone, Debug)]
pub struct RuleBasedProvider {
    pub lexicon: Vec<String>,
    pub k: usize,
    pub stopwords: Vec<String>,
}

impl RuleBasedProvider {
    pub fn new(lexicon: Vec<String>, k: usize) -> Self {
        Self {
            lexicon,
            k,
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DistractorProvider for RuleBasedProvider {
    fn id(&self) -> &str {
        "rule-based"
    }

    fn generate(&self, request: &DistractorRequest) -> Result<Vec<String>> {
        let stop: Vec<&str> = self.stopwords.iter().map(String::as_str).collect();
        Ok(rule_based_distractors(&request.correct, &self.lexicon, self.k, &stop))
    }
}

/// Child process speaking request/response JSON lines, one at a time.
pub struct PipeProvider {
    id: String,
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl PipeProvider {
    /// Runs `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Provider {
                mcq_id: String::new(),
                name: String::new(),
                message: format!("cannot spawn {command:?}: {e}"),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            id: format!("pipe:{command}"),
            io: Mutex::new((child, stdin, stdout)),
        })
    }

    fn exchange(&self, request: &DistractorRequest) -> std::result::Result<Vec<String>, String> {
        let mut guard = self.io.lock().map_err(|_| "provider lock poisoned".to_string())?;
        let (_, stdin, stdout) = &mut *guard;
        let line = serde_json::to_string(request).map_err(|e| e.to_string())?;
        writeln!(stdin, "{line}").and_then(|_| stdin.flush()).map_err(|e| e.to_string())?;
        let mut reply = String::new();
        if stdout.read_line(&mut reply).map_err(|e| e.to_string())? == 0 {
            return Err("provider closed its output".into());
        }
        let response: DistractorResponse = serde_json::from_str(&reply).map_err(|e| e.to_string())?;
        Ok(response.distractors)
    }
}

impl Drop for PipeProvider {
    fn drop(&mut self) {
        if let Ok(guard) = self.io.get_mut() {
            let _ = guard.0.kill();
            let _ = guard.0.wait();
        }
    }
}

impl DistractorProvider for PipeProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &DistractorRequest) -> Result<Vec<String>> {
        self.exchange(request).map_err(|message| Error::Provider {
            mcq_id: request.mcq_id.clone(),
            name: request.name.clone(),
            message,
        })
    }
}

/// POSTs each request as JSON to `url`.
pub struct HttpProvider {
    id: String,
    url: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(url: &str, timeout: Duration) -> Self {
        Self {
            id: format!("http:{url}"),
            url: url.to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl DistractorProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &DistractorRequest) -> Result<Vec<String>> {
        let fail = |message: String| Error::Provider {
            mcq_id: request.mcq_id.clone(),
            name: request.name.clone(),
            message,
        };
        let response: DistractorResponse = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| fail(e.to_string()))?
            .into_json()
            .map_err(|e| fail(e.to_string()))?;
        Ok(response.distractors)
    }
}

/// The union of distractors generated for one question across names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorPool {
    pub source_mcq_id: String,
    /// Sorted and distinct.
    pub distractors: Vec<String>,
    /// Distractor → id of the provider that first produced it.
    pub provenance: BTreeMap<String, String>,
}

impl DistractorPool {
    pub fn len(&self) -> usize {
        self.distractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distractors.is_empty()
    }

    /// Set union; commutative and associative.
    pub fn merge(&mut self, other: DistractorPool) {
        let mut set: BTreeSet<String> = std::mem::take(&mut self.distractors).into_iter().collect();
        set.extend(other.distractors);
        self.distractors = set.into_iter().collect();
        for (d, p) in other.provenance {
            self.provenance.entry(d).or_insert(p);
        }
    }
}

/// Asks the provider for distractors once per name, with the name
/// substituted into the question, and takes the union. Mentions of the name
/// inside returned distractors are mapped back to the question's canonical
/// name so the pool is name-neutral. The correct choice itself is dropped.
pub fn build_distractor_pool(
    mcq: &Mcq,
    names: &[String],
    provider: &dyn DistractorProvider,
) -> Result<DistractorPool> {
    let canonical = mcq.canonical_names().first().map(|s| s.to_string());
    let mut set = BTreeSet::new();
    for name in names {
        let shown = title_case(name);
        let substituted = match &canonical {
            Some(c) => substitute_name(mcq, c, &shown)?,
            None => mcq.clone(),
        };
        let request = DistractorRequest {
            mcq_id: mcq.id.clone(),
            context: substituted.context.clone(),
            question: substituted.question.clone(),
            correct: substituted.correct().to_string(),
            name: shown.clone(),
        };
        let generated = provider.generate(&request).map_err(|e| match e {
            e @ Error::Provider { .. } => e,
            other => Error::Provider {
                mcq_id: mcq.id.clone(),
                name: name.clone(),
                message: other.to_string(),
            },
        })?;
        let back: BTreeMap<String, String> = match &canonical {
            Some(c) if *c != shown => BTreeMap::from([(shown.clone(), c.clone())]),
            _ => BTreeMap::new(),
        };
        for d in generated {
            set.insert(replace_whole_words(&d, &back));
        }
    }
    set.remove(mcq.correct());
    let provenance = set.iter().map(|d| (d.clone(), provider.id().to_string())).collect();
    Ok(DistractorPool {
        source_mcq_id: mcq.id.clone(),
        distractors: set.into_iter().collect(),
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn single_swap() {
        let d = rule_based_distractors("a quiet person", &lex(&["violent"]), 1, DEFAULT_STOPWORDS);
        assert_eq!(d, vec!["a violent person"]);
    }

    #[test]
    fn k_zero() {
        assert!(rule_based_distractors("a quiet person", &lex(&["violent"]), 0, DEFAULT_STOPWORDS).is_empty());
    }

    #[test]
    fn k_exceeds_available() {
        let d = rule_based_distractors("a quiet person", &lex(&["violent", "rude", "lazy"]), 10, DEFAULT_STOPWORDS);
        assert_eq!(d.len(), 6);
        assert_eq!(d[0], "a violent person");
        assert_eq!(d[3], "a quiet violent");
    }

    #[test]
    fn punctuation_kept_around_swapped_word() {
        let d = rule_based_distractors("very happy.", &lex(&["angry"]), 5, DEFAULT_STOPWORDS);
        assert_eq!(d, vec!["very angry."]);
    }

    struct Fixed(Vec<Vec<&'static str>>);

    impl DistractorProvider for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn generate(&self, request: &DistractorRequest) -> Result<Vec<String>> {
            let i = request.name.len() % self.0.len();
            Ok(self.0[i].iter().map(|s| s.to_string()).collect())
        }
    }

    struct Failing;

    impl DistractorProvider for Failing {
        fn id(&self) -> &str {
            "failing"
        }
        fn generate(&self, _: &DistractorRequest) -> Result<Vec<String>> {
            Err(Error::Scorer("boom".into()))
        }
    }

    fn mcq() -> Mcq {
        Mcq::new("m1", "Kai waited.", "How is Kai?", ["a quiet person", "b", "c"], 0).unwrap()
    }

    #[test]
    fn identical_outputs_pool_of_one() {
        let provider = Fixed(vec![vec!["a violent person"]]);
        let pool = build_distractor_pool(&mcq(), &lex(&["ann", "bo"]), &provider).unwrap();
        assert_eq!(pool.distractors, vec!["a violent person"]);
        assert_eq!(pool.provenance["a violent person"], "fixed");
    }

    #[test]
    fn union_across_names() {
        // "ab" has length 2 → set 0, "abc" → set 1
        let provider = Fixed(vec![vec!["x"], vec!["x", "y", "a quiet person"]]);
        let pool = build_distractor_pool(&mcq(), &lex(&["ab", "abc"]), &provider).unwrap();
        assert_eq!(pool.distractors, vec!["x", "y"]);
    }

    #[test]
    fn failure_names_the_pair() {
        let err = build_distractor_pool(&mcq(), &lex(&["nichelle"]), &Failing).unwrap_err();
        match err {
            Error::Provider { mcq_id, name, .. } => {
                assert_eq!(mcq_id, "m1");
                assert_eq!(name, "nichelle");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn name_mentions_mapped_back_to_canonical() {
        struct Echo;
        impl DistractorProvider for Echo {
            fn id(&self) -> &str {
                "echo"
            }
            fn generate(&self, r: &DistractorRequest) -> Result<Vec<String>> {
                Ok(vec![format!("{} is rude", r.name)])
            }
        }
        let spotted = super::super::spot_names(&mcq(), &super::super::NameLexicon::new(["kai"]).unwrap());
        let pool = build_distractor_pool(&spotted, &lex(&["nichelle", "bo"]), &Echo).unwrap();
        assert_eq!(pool.distractors, vec!["Kai is rude"]);
    }

    fn pool_of(items: Vec<String>) -> DistractorPool {
        let mut p = DistractorPool::default();
        p.merge(DistractorPool {
            distractors: items.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
            provenance: items.iter().map(|d| (d.clone(), "p".to_string())).collect(),
            ..DistractorPool::default()
        });
        p
    }

    proptest! {
        #[test]
        fn union_commutes_and_associates(
            a in prop::collection::vec("[a-c]{1,2}", 0..5),
            b in prop::collection::vec("[a-c]{1,2}", 0..5),
            c in prop::collection::vec("[a-c]{1,2}", 0..5),
        ) {
            let mut ab = pool_of(a.clone());
            ab.merge(pool_of(b.clone()));
            let mut ba = pool_of(b.clone());
            ba.merge(pool_of(a.clone()));
            prop_assert_eq!(&ab, &ba);
            let mut ab_c = ab.clone();
            ab_c.merge(pool_of(c.clone()));
            let mut bc = pool_of(b);
            bc.merge(pool_of(c));
            let mut a_bc = pool_of(a);
            a_bc.merge(bc);
            prop_assert_eq!(ab_c, a_bc);
        }
    }
}
