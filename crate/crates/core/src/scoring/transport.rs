//! Out-of-process scorers: JSON lines over a child's stdio, or HTTP.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{decode_response_line, Scorer, ScoreRequest, WireResponse};
use crate::error::{Error, Result};

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

/// One or more child processes, each fed whole batches. A batch writes all
/// its requests, then collects one response line per request in any order.
pub struct PipeScorer {
    command: String,
    workers: Vec<Mutex<Worker>>,
    next: AtomicUsize,
    timeout: Duration,
}

impl PipeScorer {
    /// Spawns `workers` copies of `command` through `sh -c`.
    pub fn spawn(command: &str, workers: usize, timeout: Duration) -> Result<Self> {
        let workers = (0..workers.max(1))
            .map(|_| spawn_worker(command).map(Mutex::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            command: command.to_string(),
            workers,
            next: AtomicUsize::new(0),
            timeout,
        })
    }
}

fn spawn_worker(command: &str) -> Result<Worker> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Scorer(format!("cannot spawn {command:?}: {e}")))?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, lines) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    Ok(Worker { child, stdin, lines })
}

impl Scorer for PipeScorer {
    fn id(&self) -> String {
        format!("pipe:{}", self.command)
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<WireResponse>> {
        let slot = self.next.fetch_add(1, Ordering::Relaxed) % self.workers.len();
        let mut worker = self.workers[slot]
            .lock()
            .map_err(|_| Error::Scorer("worker lock poisoned".into()))?;
        let mut payload = Vec::new();
        for r in requests {
            serde_json::to_writer(&mut payload, r)?;
            payload.push(b'\n');
        }
        worker
            .stdin
            .write_all(&payload)
            .and_then(|_| worker.stdin.flush())
            .map_err(|e| Error::Scorer(format!("write to scorer failed: {e}")))?;

        let deadline = Instant::now() + self.timeout;
        let mut responses = Vec::with_capacity(requests.len());
        while responses.len() < requests.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            match worker.lines.recv_timeout(left) {
                Ok(line) if line.trim().is_empty() => {}
                Ok(line) => match decode_response_line(&line) {
                    Ok(r) => responses.push(r),
                    Err(e) => log::warn!("{e}"),
                },
                Err(RecvTimeoutError::Timeout) => {
                    log::warn!("scorer timed out with {}/{} responses", responses.len(), requests.len());
                    break;
                }
                Err(RecvTimeoutError::Disconnected) => {
                    if responses.is_empty() {
                        return Err(Error::Scorer("scorer process closed its output".into()));
                    }
                    break;
                }
            }
        }
        Ok(responses)
    }
}

impl Drop for PipeScorer {
    fn drop(&mut self) {
        for w in &mut self.workers {
            if let Ok(w) = w.get_mut() {
                let _ = w.child.kill();
                let _ = w.child.wait();
            }
        }
    }
}

/// POSTs a JSON array of requests to `<base>/score`.
pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let base = base.trim_end_matches('/');
        let url = if base.ends_with("/score") {
            base.to_string()
        } else {
            format!("{base}/score")
        };
        Self {
            url,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Scorer for HttpScorer {
    fn id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<WireResponse>> {
        let response = self
            .agent
            .post(&self.url)
            .send_json(requests)
            .map_err(|e| Error::Scorer(format!("POST {}: {e}", self.url)))?;
        let text = response
            .into_string()
            .map_err(|e| Error::Scorer(format!("reading response: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("bad response body: {e}")))
    }
}
