//! Protocol conformance check for scorer adapters.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Scorer, ScoreRequest};
use crate::error::Result;

/// `n` varied, well-formed requests with ids `conf-000`, `conf-001`, ...
pub fn conformance_requests(n: usize) -> Vec<ScoreRequest> {
    const NAMES: [&str; 5] = ["Kai", "Nichelle", "José", "Mary-Jo", "Alex"];
    const CHOICES: [&str; 6] = ["hopeful", "a quiet person", "\"angry\"", "tired\nand sad", "", "excited 🙂"];
    (0..n)
        .map(|i| ScoreRequest {
            id: format!("conf-{i:03}"),
            context: format!("{} made a wish and truly believed that it would come true.", NAMES[i % NAMES.len()]),
            question: "How would you describe them?".into(),
            choices: [0, 1, 2].map(|j| CHOICES[(i + j * 2) % CHOICES.len()].to_string()),
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ConformanceReport {
    pub requests: usize,
    pub responses: usize,
    pub missing: Vec<String>,
    pub unknown: Vec<String>,
    pub duplicates: Vec<String>,
    /// `(id, problem)` for responses without three finite logits.
    pub malformed: Vec<(String, String)>,
    /// Whether re-sending the first request reproduced its logits.
    pub deterministic: Option<bool>,
}

impl ConformanceReport {
    /// Response ids are a permutation of request ids and every response is
    /// well formed.
    pub fn passed(&self) -> bool {
        self.missing.is_empty() && self.unknown.is_empty() && self.duplicates.is_empty() && self.malformed.is_empty()
    }
}

pub fn run_conformance(scorer: &dyn Scorer, n: usize, batch: usize) -> Result<ConformanceReport> {
    let requests = conformance_requests(n);
    let wanted: BTreeSet<&str> = requests.iter().map(|r| r.id.as_str()).collect();
    let mut report = ConformanceReport {
        requests: n,
        ..ConformanceReport::default()
    };
    let mut seen: BTreeMap<String, [f64; 3]> = BTreeMap::new();
    for chunk in requests.chunks(batch.max(1)) {
        for response in scorer.score_batch(chunk)? {
            report.responses += 1;
            let id = response.id.clone();
            if !wanted.contains(id.as_str()) {
                report.unknown.push(id);
                continue;
            }
            if seen.contains_key(&id) {
                report.duplicates.push(id);
                continue;
            }
            match response.validate() {
                Ok(r) => {
                    seen.insert(id, r.logits);
                }
                Err((id, problem)) => {
                    report.malformed.push((id.clone(), problem));
                    seen.insert(id, [f64::NAN; 3]);
                }
            }
        }
    }
    report.missing = wanted.iter().filter(|id| !seen.contains_key(**id)).map(|s| s.to_string()).collect();

    if let Some(first) = requests.first() {
        let again = scorer.score_batch(std::slice::from_ref(first))?;
        report.deterministic = match (again.into_iter().next().map(|r| r.validate()), seen.get(&first.id)) {
            (Some(Ok(r)), Some(before)) => Some(r.logits == *before),
            _ => Some(false),
        };
    }
    Ok(report)
}
