//! Scoring evaluation instances through an external or synthetic scorer.
//!
//! Scorers speak wire protocol v1: a request carries an id, the context, the
//! question and three choices; a response carries the id and three logits.

mod conformance;
mod synthetic;
mod transport;

pub use conformance::{conformance_requests, run_conformance, ConformanceReport};
pub use synthetic::{contains_whole_word, Association, BiasedScorer, ConstantScorer, UnbiasedScorer};
pub use transport::{HttpScorer, PipeScorer};

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcq::EvalInstance;

/// Minimum fraction of instances that must be scored before statistics are
/// emitted.
pub const COVERAGE_FLOOR: f64 = 0.995;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub context: String,
    pub question: String,
    pub choices: [String; 3],
}

impl From<&EvalInstance> for ScoreRequest {
    fn from(instance: &EvalInstance) -> Self {
        Self {
            id: instance.id.clone(),
            context: instance.context.clone(),
            question: instance.question.clone(),
            choices: instance.choices.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreResponse {
    pub id: String,
    pub logits: [f64; 3],
}

/// Response as it arrives on the wire, before validation. Adapters may
/// answer a malformed request with `{"id", "error"}` instead of logits.
#[derive(Clone, Debug, Deserialize)]
pub struct WireResponse {
    pub id: String,
    #[serde(default)]
    pub logits: Option<Vec<f64>>,
    #[serde(default)]
    pub error: Option<String>,
}

impl WireResponse {
    pub fn validate(self) -> std::result::Result<ScoreResponse, (String, String)> {
        if let Some(e) = self.error {
            return Err((self.id, format!("scorer error: {e}")));
        }
        let logits = match self.logits {
            Some(l) if l.len() == 3 => [l[0], l[1], l[2]],
            Some(l) => return Err((self.id, format!("expected 3 logits, got {}", l.len()))),
            None => return Err((self.id, "response has no logits".into())),
        };
        if logits.iter().any(|x| !x.is_finite()) {
            return Err((self.id, "non-finite logit".into()));
        }
        Ok(ScoreResponse { id: self.id, logits })
    }
}

pub fn decode_response_line(line: &str) -> Result<WireResponse> {
    serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad response line: {e}")))
}

pub trait Scorer: Send + Sync {
    fn id(&self) -> String;

    /// Scores a batch. Responses may come back in any order; missing or
    /// malformed entries are treated as failures of those ids only.
    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<WireResponse>>;
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub mcq_id: String,
    pub name: String,
    pub chosen: usize,
    pub distractor_pos: usize,
    pub correct_pos: usize,
    pub words: Vec<String>,
}

impl ScoreRecord {
    pub fn fooled(&self) -> bool {
        self.chosen == self.distractor_pos
    }
}

pub fn write_records<'a>(mut out: impl Write, records: impl IntoIterator<Item = &'a ScoreRecord>) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Streams records from JSONL, reporting the line of the first bad record.
pub fn read_records(reader: impl BufRead) -> impl Iterator<Item = Result<ScoreRecord>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(|e| Error::Parse {
            context: "score records".into(),
            line: i + 1,
            message: e.to_string(),
        })),
    })
}

#[derive(Clone, Debug)]
pub struct ScoreOptions {
    pub batch: usize,
    /// Batches scored concurrently per round.
    pub in_flight: usize,
    /// Extra attempts for ids that failed.
    pub retries: usize,
    pub retry_delay: Duration,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            batch: 64,
            in_flight: rayon::current_num_threads().max(1),
            retries: 2,
            retry_delay: Duration::from_millis(50),
        }
    }
}

/// A quarantined instance and the last failure seen for it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub total: u64,
    pub scored: u64,
    pub quarantined: u64,
}

impl ScoreSummary {
    /// Fraction scored; 1.0 for an empty run.
    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.scored as f64 / self.total as f64
        }
    }

    pub fn check_coverage(&self, floor: f64) -> Result<()> {
        let coverage = self.coverage();
        if coverage < floor {
            Err(Error::CoverageBelowFloor { coverage, floor })
        } else {
            Ok(())
        }
    }
}

/// Scores instances in batches, several batches in flight at once. Records
/// are handed to `emit` in instance order, so output is independent of
/// scheduling. Ids still failing after the retries go to `quarantine` as
/// JSON lines and scoring continues.
pub fn score_stream(
    instances: impl Iterator<Item = EvalInstance>,
    scorer: &dyn Scorer,
    options: &ScoreOptions,
    mut emit: impl FnMut(ScoreRecord) -> Result<()>,
    mut quarantine: impl Write,
) -> Result<ScoreSummary> {
    let batch = options.batch.max(1);
    let round = batch * options.in_flight.max(1);
    let mut summary = ScoreSummary::default();
    let mut instances = instances.peekable();
    let mut rounds = 0u64;
    while instances.peek().is_some() {
        let chunk: Vec<EvalInstance> = instances.by_ref().take(round).collect();
        let outcomes: Vec<Vec<std::result::Result<ScoreRecord, Quarantined>>> = chunk
            .par_chunks(batch)
            .map(|b| score_batch_with_retries(b, scorer, options))
            .collect();
        for outcome in outcomes.into_iter().flatten() {
            summary.total += 1;
            match outcome {
                Ok(record) => {
                    summary.scored += 1;
                    emit(record)?;
                }
                Err(q) => {
                    summary.quarantined += 1;
                    serde_json::to_writer(&mut quarantine, &q)?;
                    quarantine.write_all(b"\n")?;
                }
            }
        }
        rounds += 1;
        if rounds % 50 == 0 {
            log::info!("scored {} instances ({} quarantined)", summary.scored, summary.quarantined);
        }
    }
    quarantine.flush()?;
    Ok(summary)
}

fn score_batch_with_retries(
    batch: &[EvalInstance],
    scorer: &dyn Scorer,
    options: &ScoreOptions,
) -> Vec<std::result::Result<ScoreRecord, Quarantined>> {
    let index: HashMap<&str, usize> = batch.iter().enumerate().map(|(i, x)| (x.id.as_str(), i)).collect();
    let mut logits: Vec<Option<[f64; 3]>> = vec![None; batch.len()];
    let mut errors: Vec<String> = vec!["not attempted".into(); batch.len()];
    let mut pending: Vec<usize> = (0..batch.len()).collect();

    for attempt in 0..=options.retries {
        if pending.is_empty() {
            break;
        }
        if attempt > 0 {
            std::thread::sleep(options.retry_delay);
        }
        let requests: Vec<ScoreRequest> = pending.iter().map(|&i| ScoreRequest::from(&batch[i])).collect();
        match scorer.score_batch(&requests) {
            Ok(responses) => {
                for response in responses {
                    let Some(&i) = index.get(response.id.as_str()) else {
                        log::warn!("scorer returned unknown id {:?}", response.id);
                        continue;
                    };
                    if logits[i].is_some() {
                        continue;
                    }
                    match response.validate() {
                        Ok(r) => logits[i] = Some(r.logits),
                        Err((_, e)) => errors[i] = e,
                    }
                }
                for &i in &pending {
                    if logits[i].is_none() && errors[i] == "not attempted" {
                        errors[i] = "no response for id".into();
                    }
                }
            }
            Err(e) => {
                log::warn!("scorer batch failed (attempt {}): {e}", attempt + 1);
                for &i in &pending {
                    errors[i] = e.to_string();
                }
            }
        }
        pending.retain(|&i| logits[i].is_none());
    }

    batch
        .iter()
        .zip(logits)
        .zip(errors)
        .map(|((instance, l), error)| match l {
            Some(l) => Ok(ScoreRecord {
                mcq_id: instance.mcq_id.clone(),
                name: instance.name.clone(),
                chosen: argmax(&l),
                distractor_pos: instance.distractor_index,
                correct_pos: instance.correct_index,
                words: instance.words.clone(),
            }),
            None => Err(Quarantined {
                id: instance.id.clone(),
                error,
            }),
        })
        .collect()
}
