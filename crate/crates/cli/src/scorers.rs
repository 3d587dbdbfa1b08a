//! Scorer selection from `--scorer` specs, and serving the synthetic
//! scorers over the wire protocol.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use namebias::names::{SubgroupKey, SubgroupSet};
use namebias::scoring::{
    Association, BiasedScorer, ConstantScorer, HttpScorer, PipeScorer, ScoreRequest, Scorer, UnbiasedScorer,
    WireResponse,
};
use serde::{Deserialize, Serialize};

/// A planted association as written in a biased-scorer spec file. Names may
/// be listed directly, taken from a subgroup, or both.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationSpec {
    pub word: String,
    pub boost: f64,
    #[serde(default)]
    pub names: Vec<String>,
    pub group: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasedSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mask_name: bool,
    pub associations: Vec<AssociationSpec>,
}

impl BiasedSpec {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }

    pub fn resolve(&self, subgroups: Option<&SubgroupSet>) -> anyhow::Result<Vec<Association>> {
        self.associations
            .iter()
            .map(|a| {
                let mut names: BTreeSet<String> = a.names.iter().cloned().collect();
                if let Some(group) = &a.group {
                    let set = subgroups
                        .ok_or_else(|| anyhow!("association {:?} names group {group} but no subgroups were given", a.word))?;
                    let key: SubgroupKey = group.parse()?;
                    let members = set.members(&key);
                    if members.is_empty() {
                        bail!("association {:?}: subgroup {group} is empty", a.word);
                    }
                    names.extend(members.iter().cloned());
                }
                if names.is_empty() {
                    bail!("association {:?} lists no names", a.word);
                }
                Ok(Association {
                    word: a.word.clone(),
                    names,
                    boost: a.boost,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScorerSpec {
    Pipe(String),
    Http(String),
    Unbiased { seed: u64, masked: bool },
    Biased(PathBuf),
    Constant([f64; 3]),
}

impl ScorerSpec {
    /// `pipe:<cmd>`, `http:<url>`, `synthetic:unbiased:<seed>[:masked]`,
    /// `synthetic:biased:<spec file>` or `synthetic:constant[:a,b,c]`.
    pub fn parse(spec: &str) -> anyhow::Result<Self> {
        if let Some(cmd) = spec.strip_prefix("pipe:") {
            return Ok(ScorerSpec::Pipe(cmd.to_string()));
        }
        if let Some(url) = spec.strip_prefix("http:") {
            // accept both `http:<host:port>` and `http:http://...`
            let url = if url.starts_with("http://") || url.starts_with("https://") {
                url.to_string()
            } else {
                format!("http://{}", url.trim_start_matches('/'))
            };
            return Ok(ScorerSpec::Http(url));
        }
        let rest = spec
            .strip_prefix("synthetic:")
            .ok_or_else(|| anyhow!("scorer spec {spec:?} must start with pipe:, http: or synthetic:"))?;
        let (kind, arg) = rest.split_once(':').unwrap_or((rest, ""));
        match kind {
            "unbiased" => {
                let (seed, flag) = arg.split_once(':').unwrap_or((arg, ""));
                let seed = if seed.is_empty() { 0 } else { seed.parse().with_context(|| format!("bad seed in {spec:?}"))? };
                match flag {
                    "" => Ok(ScorerSpec::Unbiased { seed, masked: false }),
                    "masked" => Ok(ScorerSpec::Unbiased { seed, masked: true }),
                    other => bail!("unknown unbiased scorer option {other:?}"),
                }
            }
            "biased" if !arg.is_empty() => Ok(ScorerSpec::Biased(PathBuf::from(arg))),
            "biased" => bail!("synthetic:biased needs a spec file"),
            "constant" if arg.is_empty() => Ok(ScorerSpec::Constant([0.0; 3])),
            "constant" => {
                let parts: Vec<f64> = arg
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("bad logits in {spec:?}"))?;
                let logits: [f64; 3] = parts.try_into().map_err(|_| anyhow!("constant scorer needs 3 logits"))?;
                Ok(ScorerSpec::Constant(logits))
            }
            other => bail!("unknown synthetic scorer {other:?}"),
        }
    }

    pub fn build(&self, subgroups: Option<&SubgroupSet>, workers: usize, timeout: Duration) -> anyhow::Result<Box<dyn Scorer>> {
        Ok(match self {
            ScorerSpec::Pipe(cmd) => Box::new(PipeScorer::spawn(cmd, workers.max(1), timeout)?),
            ScorerSpec::Http(url) => Box::new(HttpScorer::new(url, timeout)),
            ScorerSpec::Unbiased { seed, masked } => Box::new(UnbiasedScorer {
                seed: *seed,
                mask_name: *masked,
            }),
            ScorerSpec::Biased(path) => {
                let spec = BiasedSpec::load(path)?;
                let base = UnbiasedScorer {
                    seed: spec.seed,
                    mask_name: spec.mask_name,
                };
                Box::new(BiasedScorer::new(base, spec.resolve(subgroups)?)?)
            }
            ScorerSpec::Constant(logits) => Box::new(ConstantScorer { logits: *logits }),
        })
    }

    /// Spec file whose contents change results, if any.
    pub fn spec_file(&self) -> Option<&Path> {
        match self {
            ScorerSpec::Biased(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Serialize)]
struct ErrorResponse<'a> {
    id: &'a str,
    error: String,
}

/// One response line for one request line. Malformed requests get an error
/// response echoing whatever id could be recovered.
pub fn respond_line(scorer: &dyn Scorer, line: &str) -> String {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return error_line("", format!("malformed request: {e}")),
    };
    respond_value(scorer, value)
}

fn respond_value(scorer: &dyn Scorer, value: serde_json::Value) -> String {
    let id = value.get("id").and_then(|v| v.as_str()).unwrap_or("").to_string();
    let request: ScoreRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return error_line(&id, format!("malformed request: {e}")),
    };
    match scorer.score_batch(std::slice::from_ref(&request)) {
        Ok(mut responses) if responses.len() == 1 => wire_line(&responses.remove(0)),
        Ok(_) => error_line(&id, "scorer returned the wrong number of responses".into()),
        Err(e) => error_line(&id, e.to_string()),
    }
}

fn error_line(id: &str, error: String) -> String {
    serde_json::to_string(&ErrorResponse { id, error }).expect("serializes")
}

fn wire_line(r: &WireResponse) -> String {
    match (&r.logits, &r.error) {
        (Some(l), _) => serde_json::json!({"id": r.id, "logits": l}).to_string(),
        (None, e) => error_line(&r.id, e.clone().unwrap_or_else(|| "no logits".into())),
    }
}

pub fn serve_pipe(scorer: &dyn Scorer, input: impl BufRead, mut output: impl Write) -> anyhow::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", respond_line(scorer, &line))?;
        output.flush()?;
    }
    Ok(())
}

/// Serves `POST /score` with a JSON array of requests. Prints the bound
/// address on stdout, then runs until killed.
pub fn serve_http(scorer: Arc<dyn Scorer>, addr: &str, workers: usize) -> anyhow::Result<()> {
    let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| anyhow!("binding {addr}: {e}"))?);
    let bound = server.server_addr().to_ip().map(|a| a.to_string()).unwrap_or_else(|| addr.to_string());
    println!("listening on http://{bound}");
    std::io::stdout().flush()?;
    let handles: Vec<_> = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let scorer = Arc::clone(&scorer);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle_http(scorer.as_ref(), request);
                }
            })
        })
        .collect();
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

fn handle_http(scorer: &dyn Scorer, mut request: tiny_http::Request) {
    let json_header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    if request.method() != &tiny_http::Method::Post || request.url().trim_end_matches('/') != "/score" {
        let _ = request.respond(tiny_http::Response::from_string("not found").with_status_code(404));
        return;
    }
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        let _ = request.respond(tiny_http::Response::from_string("unreadable body").with_status_code(400));
        return;
    }
    let items: Vec<serde_json::Value> = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(e) => {
            let _ = request.respond(tiny_http::Response::from_string(format!("expected a JSON array: {e}")).with_status_code(400));
            return;
        }
    };
    let lines: Vec<String> = items.into_iter().map(|v| respond_value(scorer, v)).collect();
    let response = format!("[{}]", lines.join(","));
    let _ = request.respond(tiny_http::Response::from_string(response).with_header(json_header));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        assert_eq!(ScorerSpec::parse("pipe:python adapter.py").unwrap(), ScorerSpec::Pipe("python adapter.py".into()));
        assert_eq!(ScorerSpec::parse("http:127.0.0.1:9000").unwrap(), ScorerSpec::Http("http://127.0.0.1:9000".into()));
        assert_eq!(ScorerSpec::parse("http:http://h/score").unwrap(), ScorerSpec::Http("http://h/score".into()));
        assert_eq!(ScorerSpec::parse("synthetic:unbiased:7").unwrap(), ScorerSpec::Unbiased { seed: 7, masked: false });
        assert_eq!(ScorerSpec::parse("synthetic:unbiased:7:masked").unwrap(), ScorerSpec::Unbiased { seed: 7, masked: true });
        assert_eq!(ScorerSpec::parse("synthetic:constant").unwrap(), ScorerSpec::Constant([0.0; 3]));
        assert_eq!(ScorerSpec::parse("synthetic:constant:1,2,3").unwrap(), ScorerSpec::Constant([1.0, 2.0, 3.0]));
        assert_eq!(ScorerSpec::parse("synthetic:biased:b.toml").unwrap(), ScorerSpec::Biased("b.toml".into()));
        for bad in ["grpc:x", "synthetic:weird", "synthetic:biased", "synthetic:constant:1,2", "synthetic:unbiased:x"] {
            assert!(ScorerSpec::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn malformed_requests_echo_id() {
        let scorer = ConstantScorer { logits: [1.0, 2.0, 3.0] };
        let ok = respond_line(&scorer, r#"{"id":"a","context":"c","question":"q","choices":["x","y","z"]}"#);
        assert_eq!(ok, r#"{"id":"a","logits":[1.0,2.0,3.0]}"#);
        let short = respond_line(&scorer, r#"{"id":"b","context":"c","question":"q","choices":["x"]}"#);
        assert!(short.starts_with(r#"{"id":"b","error":"#), "{short}");
        let garbage = respond_line(&scorer, "not json");
        assert!(garbage.starts_with(r#"{"id":"","error":"#));
    }

    #[test]
    fn group_associations_resolve() {
        let spec: BiasedSpec = toml::from_str(
            "seed = 3\n[[associations]]\nword = \"quiet\"\nboost = 5.0\ngroup = \"W_F_1\"\nnames = [\"Zed\"]\n",
        )
        .unwrap();
        assert!(spec.resolve(None).is_err());
        let key: SubgroupKey = "W_F_1".parse().unwrap();
        let set = SubgroupSet {
            tokenizer_id: String::new(),
            seed: 0,
            cap: 2,
            groups: [(key, vec!["Ann".to_string(), "Bea".to_string()])].into(),
        };
        let resolved = spec.resolve(Some(&set)).unwrap();
        assert_eq!(resolved[0].names.len(), 3);
    }
}
