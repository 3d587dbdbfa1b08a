//! Subcommand implementations. Each reads its inputs, records them in a
//! manifest and writes its outputs under the output directory.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context as _};
use clap::{Args, ValueEnum};
use namebias::cda::{augment, uniformity_report, AugmentationPlan, DEFAULT_FACTOR};
use namebias::mcq::{
    build_distractor_pool, load_mcqs, spot_names, write_mcqs, assemble_eval_set, eval_set_size, DistractorPool,
    DistractorProvider, HttpProvider, Mcq, NameLexicon, PipeProvider, RuleBasedProvider, WordOptions,
};
use namebias::names::{
    apply_inclusion_criteria, assign_gender, build_subgroups, load_name_records, load_ssa_table, write_name_records,
    Gender, NameRecord, NameSchema, Race, SubgroupKey, SubgroupSet, DEFAULT_CAP, DEFAULT_DOMINANCE, DEFAULT_MIN_COUNT,
};
use namebias::scoring::{
    read_records, run_conformance, score_stream, write_records, ScoreOptions, ScoreSummary, COVERAGE_FLOOR,
};
use namebias::sr::{
    build_vocabulary, default_pair_plan, heatmap_csv, heatmap_svg, pairwise_heatmap, permutation_test, Annotation,
    SrAccumulator, SrTable, DEFAULT_VOCAB_THRESHOLD,
};
use namebias::tokenize::{
    conditional_stats, corpus_frequency, mean_char_length, Attribute, Direction, Tokenizer, Weighting,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{pick, Config};
use crate::output::Run;
use crate::scorers::{serve_http, serve_pipe, ScorerSpec};

pub const DEFAULT_RUNS: u64 = 10_000;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_RETRIES: usize = 2;
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_DISTRACTORS_PER_NAME: usize = 20;

/// Settings shared by every subcommand.
pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
}

impl Context {
    fn run(&self, command: &str) -> anyhow::Result<Run> {
        Run::new(command, &self.out_dir)
    }
}

#[derive(Args, Debug)]
pub struct NameInput {
    /// Name table (name,share_white,share_black,share_hispanic,share_asian,count[,gender]).
    #[arg(long)]
    pub names: PathBuf,
    /// SSA gender table (name,female_count,male_count); overrides any gender column.
    #[arg(long)]
    pub ssa: Option<PathBuf>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub dominance: Option<f64>,
}

struct PreparedNames {
    loaded: usize,
    rejected: Vec<String>,
    included: usize,
    ssa_absent: Vec<String>,
    ssa_ties: Vec<String>,
    records: Vec<NameRecord>,
}

fn prepare_names(ctx: &Context, run: &mut Run, input: &NameInput) -> anyhow::Result<PreparedNames> {
    let min_count = pick(input.min_count, ctx.config.min_count, DEFAULT_MIN_COUNT);
    let dominance = pick(input.dominance, ctx.config.dominance, DEFAULT_DOMINANCE);
    run.input("names", &input.names)?;
    run.threshold("min_count", min_count);
    run.threshold("dominance", dominance);

    let report = load_name_records(&input.names, NameSchema::V1)?;
    for d in report.diagnostics.iter().take(20) {
        log::warn!("{}: {d}", input.names.display());
    }
    if report.diagnostics.len() > 20 {
        log::warn!("{} more rejected rows", report.diagnostics.len() - 20);
    }
    let included = apply_inclusion_criteria(&report.records, min_count, dominance);
    let mut prepared = PreparedNames {
        loaded: report.records.len(),
        rejected: report.diagnostics.iter().map(ToString::to_string).collect(),
        included: included.len(),
        ssa_absent: Vec::new(),
        ssa_ties: Vec::new(),
        records: included,
    };
    if let Some(ssa) = &input.ssa {
        run.input("ssa", ssa)?;
        let table = load_ssa_table(ssa)?;
        let assigned = assign_gender(&prepared.records, &table);
        prepared.ssa_absent = assigned.absent;
        prepared.ssa_ties = assigned.ties;
        prepared.records = assigned.records;
    }
    log::info!(
        "{} names loaded, {} rejected rows, {} pass inclusion, {} kept",
        prepared.loaded,
        prepared.rejected.len(),
        prepared.included,
        prepared.records.len()
    );
    Ok(prepared)
}

#[derive(Args, Debug)]
pub struct NamesArgs {
    #[command(flatten)]
    pub input: NameInput,
}

pub fn names(ctx: &Context, args: &NamesArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("names")?;
    let p = prepare_names(ctx, &mut run, &args.input)?;

    let mut table = Vec::new();
    write_name_records(&mut table, &p.records)?;
    run.write_csv("names_included.csv", std::str::from_utf8(&table)?)?;

    let mut report = String::from("metric,value\n");
    let mut metric = |k: &str, v: usize| report.push_str(&format!("{k},{v}\n"));
    metric("loaded", p.loaded);
    metric("rejected_rows", p.rejected.len());
    metric("included", p.included);
    metric("ssa_absent", p.ssa_absent.len());
    metric("ssa_ties", p.ssa_ties.len());
    metric("kept", p.records.len());
    for race in Race::ALL {
        metric(&format!("race_{}", race.label()), p.records.iter().filter(|r| r.race == Some(race)).count());
    }
    for gender in Gender::BINARY {
        metric(&format!("gender_{}", gender.label()), p.records.iter().filter(|r| r.gender == gender).count());
    }
    run.write_csv("names_report.csv", &report)?;

    let mut dropped = String::from("name_or_line,reason\n");
    for r in &p.rejected {
        dropped.push_str(&format!("{},rejected\n", csv_field(r)));
    }
    for n in &p.ssa_absent {
        dropped.push_str(&format!("{},absent_from_ssa\n", csv_field(n)));
    }
    for n in &p.ssa_ties {
        dropped.push_str(&format!("{},ssa_tie\n", csv_field(n)));
    }
    run.write_csv("names_dropped.csv", &dropped)?;
    run.finish()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WeightingArg {
    Name,
    Count,
    Both,
}

#[derive(Args, Debug)]
pub struct TokenstatsArgs {
    #[command(flatten)]
    pub input: NameInput,
    /// `wp:<vocab.txt>`, `bpe:<vocab.json>,<merges.txt>` or `bpe+space:...`.
    #[arg(long)]
    pub tokenizer: String,
    #[arg(long, value_enum, default_value = "both")]
    pub weighting: WeightingArg,
    /// Plain-text corpus for name frequency counts.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

pub fn tokenstats(ctx: &Context, args: &TokenstatsArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("tokenstats")?;
    let tokenizer = load_tokenizer(&mut run, &args.tokenizer)?;
    let p = prepare_names(ctx, &mut run, &args.input)?;
    if let Some(corpus) = &args.corpus {
        run.input("corpus", corpus)?;
    }
    let weightings: &[(Weighting, &str)] = match args.weighting {
        WeightingArg::Name => &[(Weighting::ByName, "name")],
        WeightingArg::Count => &[(Weighting::ByCount, "count")],
        WeightingArg::Both => &[(Weighting::ByName, "name"), (Weighting::ByCount, "count")],
    };
    run.setting("weighting", weightings.iter().map(|w| w.1).collect::<Vec<_>>().join(","));
    let has_gender = p.records.iter().any(|r| r.gender != Gender::Unassigned);
    if !has_gender {
        log::warn!("no gender labels (give --ssa or a gender column); gender tables skipped");
    }

    for &(weighting, label) in weightings {
        for (attribute, attr_label) in [(Attribute::Race, "race"), (Attribute::Gender, "gender")] {
            if attribute == Attribute::Gender && !has_gender {
                continue;
            }
            for (direction, file) in [
                (Direction::AGivenB, format!("len_given_{attr_label}_{label}.csv")),
                (Direction::BGivenA, format!("{attr_label}_given_len_{label}.csv")),
            ] {
                let m = conditional_stats(&p.records, &tokenizer, attribute, direction, weighting)?;
                run.write_csv(&file, &m.to_csv())?;
            }
        }
    }

    let means = mean_char_length(p.records.iter().filter_map(|r| r.race.map(|race| (race, r.name.as_str()))));
    let mut chars = String::from("race,mean_chars\n");
    for (race, mean) in means {
        chars.push_str(&format!("{},{mean}\n", race.label()));
    }
    run.write_csv("char_length.csv", &chars)?;

    let frequency = match &args.corpus {
        Some(path) => {
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let names: Vec<String> = p.records.iter().map(|r| r.name.clone()).collect();
            Some(corpus_frequency(&names, BufReader::new(file))?)
        }
        None => None,
    };
    let mut lengths = String::from("name,race,gender,token_length,count");
    lengths.push_str(if frequency.is_some() { ",frequency\n" } else { "\n" });
    for r in &p.records {
        lengths.push_str(&format!(
            "{},{},{},{},{}",
            csv_field(&r.name),
            r.race.map_or("", |x| x.label()),
            gender_label(r.gender),
            tokenizer.token_length(&r.name),
            r.count
        ));
        if let Some(f) = &frequency {
            lengths.push_str(&format!(",{}", f.get(&r.key()).copied().unwrap_or(0)));
        }
        lengths.push('\n');
    }
    run.write_csv("token_lengths.csv", &lengths)?;
    run.finish()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SubgroupsArgs {
    #[command(flatten)]
    pub input: NameInput,
    #[arg(long)]
    pub tokenizer: String,
    /// Most names sampled per subgroup.
    #[arg(long)]
    pub cap: Option<usize>,
}

pub fn subgroups(ctx: &Context, args: &SubgroupsArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("subgroups")?;
    let tokenizer = load_tokenizer(&mut run, &args.tokenizer)?;
    let cap = pick(args.cap, ctx.config.cap, DEFAULT_CAP);
    run.threshold("cap", cap);
    run.seed("subgroups", ctx.seed);
    let p = prepare_names(ctx, &mut run, &args.input)?;
    if p.records.iter().all(|r| r.gender == Gender::Unassigned) {
        bail!("no name has a gender; give --ssa or a gender column");
    }
    let build = build_subgroups(&p.records, &tokenizer, cap, ctx.seed);
    for w in &build.warnings {
        log::warn!("{w}");
    }
    log::info!("{} names across {} subgroups", build.set.len(), build.set.groups.values().filter(|g| !g.is_empty()).count());
    run.write_bytes("subgroups.json", (build.set.to_json()? + "\n").as_bytes())?;
    run.write_csv("subgroup_counts.csv", &build.set.count_table_csv())?;
    let mut members = String::from("group,name\n");
    for (key, name) in build.set.iter() {
        members.push_str(&format!("{},{}\n", key.short(), csv_field(name)));
    }
    run.write_csv("subgroup_members.csv", &members)?;
    run.finish()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct DistractArgs {
    /// Source MCQs (JSONL).
    #[arg(long)]
    pub mcqs: PathBuf,
    #[arg(long)]
    pub subgroups: PathBuf,
    /// `rule:<attribute lexicon file>`, `pipe:<cmd>` or `http:<url>`.
    #[arg(long)]
    pub provider: String,
    /// Extra names to spot in the MCQs, one per line.
    #[arg(long)]
    pub name_lexicon: Option<PathBuf>,
    /// Names substituted when asking the provider; defaults to every subgroup name.
    #[arg(long)]
    pub generation_names: Option<PathBuf>,
    /// Distractors the rule-based provider returns per request.
    #[arg(long)]
    pub distractors_per_name: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

pub fn distract(ctx: &Context, args: &DistractArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("distract")?;
    run.input("mcqs", &args.mcqs)?;
    run.input("subgroups", &args.subgroups)?;
    let set = SubgroupSet::load(&args.subgroups)?;
    let timeout = Duration::from_secs(pick(args.timeout_secs, ctx.config.timeout_secs, DEFAULT_TIMEOUT_SECS));

    let provider: Box<dyn DistractorProvider> = if let Some(path) = args.provider.strip_prefix("rule:") {
        let path = Path::new(path);
        run.input("attribute_lexicon", path)?;
        let k = pick(args.distractors_per_name, ctx.config.distractors_per_name, DEFAULT_DISTRACTORS_PER_NAME);
        run.setting("distractors_per_name", k);
        Box::new(RuleBasedProvider::new(read_list(path)?, k))
    } else if let Some(cmd) = args.provider.strip_prefix("pipe:") {
        Box::new(PipeProvider::spawn(cmd)?)
    } else if let Some(url) = args.provider.strip_prefix("http:") {
        let url = if url.starts_with("http") { url.to_string() } else { format!("http://{url}") };
        Box::new(HttpProvider::new(&url, timeout))
    } else {
        bail!("provider {:?} must start with rule:, pipe: or http:", args.provider);
    };
    run.setting("provider", provider.id());

    let generation: Vec<String> = match &args.generation_names {
        Some(path) => {
            run.input("generation_names", path)?;
            read_list(path)?
        }
        None => set.iter().map(|(_, n)| n.to_string()).collect(),
    };
    let mcqs = spotted_mcqs(&mut run, &args.mcqs, &set, args.name_lexicon.as_deref())?;
    let (mcqs, spanless): (Vec<Mcq>, Vec<Mcq>) = mcqs.into_iter().partition(|m| !m.name_spans.is_empty());
    for m in &spanless {
        log::warn!("mcq {} mentions no known name; skipped", m.id);
    }
    if mcqs.is_empty() {
        bail!("no MCQ mentions a known name");
    }

    log::info!("generating distractors for {} MCQs x {} names", mcqs.len(), generation.len());
    let pools: Vec<DistractorPool> = mcqs
        .par_iter()
        .map(|m| build_distractor_pool(m, &generation, provider.as_ref()))
        .collect::<Result<_, _>>()?;
    let pools: BTreeMap<String, DistractorPool> = pools.into_iter().map(|p| (p.source_mcq_id.clone(), p)).collect();

    let mut spotted = Vec::new();
    write_mcqs(&mut spotted, &mcqs)?;
    run.write_bytes("mcqs.jsonl", &spotted)?;
    run.write_bytes("pools.json", (serde_json::to_string_pretty(&pools)? + "\n").as_bytes())?;
    let mut summary = String::from("mcq_id,distractors\n");
    for (id, p) in &pools {
        summary.push_str(&format!("{},{}\n", csv_field(id), p.len()));
    }
    run.write_csv("pools_summary.csv", &summary)?;
    run.finish()?;
    Ok(())
}

/// Loads MCQs, spotting names in any without spans.
fn spotted_mcqs(run: &mut Run, path: &Path, set: &SubgroupSet, lexicon: Option<&Path>) -> anyhow::Result<Vec<Mcq>> {
    let load = load_mcqs(path)?;
    for d in &load.diagnostics {
        log::warn!("{}: {d}", path.display());
    }
    let mut known: Vec<String> = set.iter().map(|(_, n)| n.to_string()).collect();
    if let Some(p) = lexicon {
        run.input("name_lexicon", p)?;
        known.extend(read_list(p)?);
    }
    let lexicon = NameLexicon::new(&known)?;
    Ok(load
        .mcqs
        .into_iter()
        .map(|m| if m.name_spans.is_empty() { spot_names(&m, &lexicon) } else { m })
        .collect())
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// MCQs with name spans, as written by `distract`.
    #[arg(long)]
    pub mcqs: PathBuf,
    #[arg(long)]
    pub pools: PathBuf,
    #[arg(long)]
    pub subgroups: PathBuf,
    /// `pipe:<cmd>`, `http:<url>` or `synthetic:{unbiased|biased|constant}:<spec>`.
    #[arg(long)]
    pub scorer: String,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Keep clitics such as 's attached when splitting distractors into words.
    #[arg(long)]
    pub keep_clitics: bool,
}

/// Written next to the score records; `srmatrix` reads it to check coverage.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scorer: String,
    pub total: u64,
    pub scored: u64,
    pub quarantined: u64,
    pub coverage: f64,
    pub floor: f64,
}

pub fn score(ctx: &Context, args: &ScoreArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("score")?;
    run.input("mcqs", &args.mcqs)?;
    run.input("pools", &args.pools)?;
    run.input("subgroups", &args.subgroups)?;
    let set = SubgroupSet::load(&args.subgroups)?;
    let spec = ScorerSpec::parse(&args.scorer)?;
    if let Some(p) = spec.spec_file() {
        run.input("scorer_spec", p)?;
    }
    let timeout = Duration::from_secs(pick(args.timeout_secs, ctx.config.timeout_secs, DEFAULT_TIMEOUT_SECS));
    let scorer = spec.build(Some(&set), ctx.threads, timeout)?;
    run.setting("scorer", scorer.id());

    let load = load_mcqs(&args.mcqs)?;
    for d in &load.diagnostics {
        log::warn!("{}: {d}", args.mcqs.display());
    }
    let pools: BTreeMap<String, DistractorPool> = serde_json::from_str(
        &std::fs::read_to_string(&args.pools).with_context(|| format!("reading {}", args.pools.display()))?,
    )
    .with_context(|| format!("parsing {}", args.pools.display()))?;
    let names: Vec<String> = set.iter().map(|(_, n)| n.to_string()).collect();
    let words = WordOptions {
        detach_clitics: !args.keep_clitics,
        ..WordOptions::default()
    };
    run.setting("detach_clitics", words.detach_clitics);
    let options = ScoreOptions {
        batch: pick(args.batch, ctx.config.batch, DEFAULT_BATCH),
        in_flight: ctx.threads,
        retries: pick(args.retries, ctx.config.retries, DEFAULT_RETRIES),
        ..ScoreOptions::default()
    };
    run.setting("retries", options.retries);

    let total = eval_set_size(&load.mcqs, &names, &pools);
    log::info!("scoring {total} instances with {}", scorer.id());
    let instances = assemble_eval_set(&load.mcqs, &names, &pools, &words)?;
    let mut records = run.create("records.jsonl")?;
    let mut quarantine = run.create("quarantine.jsonl")?;
    let summary: ScoreSummary = score_stream(
        instances,
        scorer.as_ref(),
        &options,
        |r| write_records(&mut records, [&r]),
        &mut quarantine,
    )?;
    records.flush()?;
    quarantine.flush()?;
    drop((records, quarantine));
    run.record_file("records.jsonl")?;
    run.record_file("quarantine.jsonl")?;

    let report = ScoreReport {
        scorer: scorer.id(),
        total: summary.total,
        scored: summary.scored,
        quarantined: summary.quarantined,
        coverage: summary.coverage(),
        floor: COVERAGE_FLOOR,
    };
    log::info!(
        "scored {} of {} ({} quarantined), coverage {:.4}",
        report.scored,
        report.total,
        report.quarantined,
        report.coverage
    );
    run.manifest.coverage = Some(report.coverage);
    run.write_bytes("score_summary.json", (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    run.finish()?;
    summary.check_coverage(COVERAGE_FLOOR)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SrmatrixArgs {
    /// Score records (JSONL) from `score`.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub subgroups: PathBuf,
    /// Minimum number of distractor instances for a word to enter the vocabulary.
    #[arg(long)]
    pub vocab_threshold: Option<u64>,
    /// Coverage summary; defaults to score_summary.json beside the records.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// CSV with `name` and `frequency` columns used to annotate rows.
    #[arg(long)]
    pub frequency: Option<PathBuf>,
}

pub fn srmatrix(ctx: &Context, args: &SrmatrixArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("srmatrix")?;
    let summary = args
        .summary
        .clone()
        .or_else(|| Some(args.records.with_file_name("score_summary.json")).filter(|p| p.exists()));
    match &summary {
        Some(path) => {
            let report: ScoreReport = serde_json::from_str(&std::fs::read_to_string(path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            run.manifest.coverage = Some(report.coverage);
            if report.coverage < COVERAGE_FLOOR {
                return Err(namebias::Error::CoverageBelowFloor {
                    coverage: report.coverage,
                    floor: COVERAGE_FLOOR,
                }
                .into());
            }
        }
        None => log::warn!("no score summary found; coverage unchecked"),
    }
    let threshold = pick(args.vocab_threshold, ctx.config.vocab_threshold, DEFAULT_VOCAB_THRESHOLD);
    run.threshold("vocab_threshold", threshold);
    run.input("records", &args.records)?;
    run.input("subgroups", &args.subgroups)?;
    let set = SubgroupSet::load(&args.subgroups)?;
    let frequency = match &args.frequency {
        Some(p) => {
            run.input("frequency", p)?;
            read_frequency(p)?
        }
        None => HashMap::new(),
    };

    // two passes so the records never need to fit in memory
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for record in open_records(&args.records)? {
        for w in record?.words {
            *counts.entry(w).or_default() += 1;
        }
    }
    let vocabulary = build_vocabulary(&counts, threshold)?;
    log::info!("{} of {} words reach {threshold} instances", vocabulary.len(), counts.len());
    let names: Vec<String> = set.iter().map(|(_, n)| n.to_string()).collect();
    let mut acc = SrAccumulator::new(names, vocabulary.clone());
    for record in open_records(&args.records)? {
        acc.add(&record?);
    }
    if acc.ignored() > 0 {
        log::warn!("{} records name someone outside the subgroups", acc.ignored());
    }
    let matrix = acc.finish();
    for name in matrix.empty_rows() {
        log::warn!("{name} has no trials; excluded from membership tests");
    }

    let keys = set.key_index();
    let mut table = matrix.to_table();
    table.annotations = table.names.iter().map(|n| annotation(n, &keys, &frequency)).collect();

    let mut vocab_csv = String::from("word,instances\n");
    for w in &vocabulary.words {
        vocab_csv.push_str(&format!("{},{}\n", csv_field(w), counts[w]));
    }
    run.write_csv("vocabulary.csv", &vocab_csv)?;
    let mut sr = Vec::new();
    table.write_csv(&mut sr)?;
    run.write_csv("sr.csv", std::str::from_utf8(&sr)?)?;
    run.write_csv("sr_support.csv", &matrix.support_csv())?;
    run.finish()?;
    Ok(())
}

fn open_records(path: &Path) -> anyhow::Result<impl Iterator<Item = namebias::Result<namebias::scoring::ScoreRecord>>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_records(BufReader::new(file)))
}

fn annotation(name: &str, keys: &HashMap<String, SubgroupKey>, frequency: &HashMap<String, String>) -> Option<Annotation> {
    let key = keys.get(&name.to_lowercase());
    let freq = frequency.get(&name.to_lowercase()).cloned().unwrap_or_default();
    if key.is_none() && freq.is_empty() {
        return None;
    }
    Some(Annotation {
        race: key.map_or(String::new(), |k| k.race.label().to_string()),
        gender: key.map_or(String::new(), |k| k.gender.label().to_string()),
        token_length: key.map_or(String::new(), |k| k.token_length.to_string()),
        frequency: freq,
    })
}

#[derive(Args, Debug)]
pub struct MembershipArgs {
    /// SR table from `srmatrix` or `export`.
    #[arg(long)]
    pub sr: PathBuf,
    #[arg(long)]
    pub group_a: String,
    #[arg(long)]
    pub group_b: String,
    /// Group membership; defaults to the annotations in the SR table.
    #[arg(long)]
    pub subgroups: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<u64>,
}

pub fn membership(ctx: &Context, args: &MembershipArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("membership")?;
    let runs = pick(args.runs, ctx.config.runs, DEFAULT_RUNS);
    run.threshold("runs", runs);
    run.seed("permutation", ctx.seed);
    let (table, set) = load_sr(&mut run, &args.sr, args.subgroups.as_deref())?;
    let a: SubgroupKey = args.group_a.parse()?;
    let b: SubgroupKey = args.group_b.parse()?;
    let means = table.column_means();
    let va = table.group_vectors(set.members(&a), &means);
    let vb = table.group_vectors(set.members(&b), &means);
    let mut result = permutation_test(&va, &vb, runs, ctx.seed)
        .with_context(|| format!("{} has {} usable names, {} has {}", a.short(), va.len(), b.short(), vb.len()))?;
    result.group_a = a.short();
    result.group_b = b.short();
    log::info!("{} vs {}: accuracy {} p {}", result.group_a, result.group_b, result.accuracy, result.p_value);
    let csv = format!(
        "group_a,group_b,n_a,n_b,accuracy,p_value,exceed,runs,seed\n{},{},{},{},{},{},{},{},{}\n",
        result.group_a,
        result.group_b,
        va.len(),
        vb.len(),
        result.accuracy,
        result.p_value,
        result.exceed,
        result.runs,
        result.seed
    );
    run.write_csv("membership.csv", &csv)?;
    run.finish()?;
    Ok(())
}

fn load_sr(run: &mut Run, sr: &Path, subgroups: Option<&Path>) -> anyhow::Result<(SrTable, SubgroupSet)> {
    run.input("sr", sr)?;
    let file = std::fs::File::open(sr).with_context(|| format!("opening {}", sr.display()))?;
    let table = SrTable::read_csv(file).with_context(|| format!("reading {}", sr.display()))?;
    let set = match subgroups {
        Some(p) => {
            run.input("subgroups", p)?;
            SubgroupSet::load(p)?
        }
        None => table.subgroups_from_annotations()?,
    };
    Ok((table, set))
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub sr: PathBuf,
    #[arg(long)]
    pub subgroups: Option<PathBuf>,
    /// Pairs to test, one `GROUP_A,GROUP_B` per line; defaults to the
    /// gender, race and length contrasts.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<u64>,
    #[arg(long, default_value = "membership prediction accuracy")]
    pub title: String,
}

pub fn heatmap(ctx: &Context, args: &HeatmapArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("heatmap")?;
    let runs = pick(args.runs, ctx.config.runs, DEFAULT_RUNS);
    run.threshold("runs", runs);
    run.seed("permutation", ctx.seed);
    let (table, set) = load_sr(&mut run, &args.sr, args.subgroups.as_deref())?;
    let plan = match &args.pairs {
        Some(p) => {
            run.input("pairs", p)?;
            read_pairs(p)?
        }
        None => default_pair_plan(),
    };
    log::info!("{} pairs x {runs} permutations", plan.len());
    let cells = pairwise_heatmap(&table, &set, &plan, runs, ctx.seed);
    for c in &cells {
        if let Some(note) = &c.note {
            log::warn!("{} vs {} unavailable: {note}", c.group_a.short(), c.group_b.short());
        }
    }
    run.write_csv("heatmap.csv", &heatmap_csv(&cells))?;
    run.write_bytes("heatmap.svg", heatmap_svg(&cells, &args.title).as_bytes())?;
    run.finish()?;
    Ok(())
}

fn read_pairs(path: &Path) -> anyhow::Result<Vec<(SubgroupKey, SubgroupKey)>> {
    read_list(path)?
        .into_iter()
        .filter(|l| !l.eq_ignore_ascii_case("group_a,group_b"))
        .map(|l| {
            let (a, b) = l.split_once(',').ok_or_else(|| anyhow!("pair line {l:?} needs two groups"))?;
            Ok((a.trim().parse()?, b.trim().parse()?))
        })
        .collect()
}

#[derive(Args, Debug)]
pub struct CdaArgs {
    /// Training MCQs (JSONL).
    #[arg(long)]
    pub mcqs: PathBuf,
    #[arg(long)]
    pub subgroups: PathBuf,
    /// Names to spot in MCQs that carry no spans, one per line.
    #[arg(long)]
    pub name_lexicon: Option<PathBuf>,
    /// Copies per sample.
    #[arg(long)]
    pub factor: Option<usize>,
}

#[derive(Serialize)]
struct CdaSummary {
    inputs: usize,
    augmented: usize,
    passthrough: usize,
    total_replacements: u64,
    max_deviation: f64,
    max_deviation_fraction: f64,
    chi_square: f64,
    warnings: Vec<String>,
}

pub fn cda(ctx: &Context, args: &CdaArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("cda")?;
    let factor = pick(args.factor, ctx.config.factor, DEFAULT_FACTOR);
    run.threshold("factor", factor);
    run.seed("cda", ctx.seed);
    run.input("mcqs", &args.mcqs)?;
    run.input("subgroups", &args.subgroups)?;
    let set = SubgroupSet::load(&args.subgroups)?;
    let mcqs = spotted_mcqs(&mut run, &args.mcqs, &set, args.name_lexicon.as_deref())?;
    let plan = AugmentationPlan::over_subgroups(factor, &set, ctx.seed)?;
    log::info!("augmenting {} samples x {factor} over {} bins", mcqs.len(), plan.bins.len());
    let out = augment(&mcqs, &set, &plan)?;
    let report = uniformity_report(&out.samples, &set);

    let mut w = run.create("augmented.jsonl")?;
    write_mcqs(&mut w, &out.samples)?;
    w.flush()?;
    drop(w);
    run.record_file("augmented.jsonl")?;
    run.write_csv("uniformity.csv", &report.to_csv())?;
    let summary = CdaSummary {
        inputs: mcqs.len(),
        augmented: out.augmented,
        passthrough: out.passthrough,
        total_replacements: report.total,
        max_deviation: report.max_deviation,
        max_deviation_fraction: report.max_deviation_fraction,
        chi_square: report.chi_square,
        warnings: out.warnings,
    };
    run.write_bytes("cda_summary.json", (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    run.finish()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub sr: PathBuf,
    /// Re-annotate rows from these subgroups.
    #[arg(long)]
    pub subgroups: Option<PathBuf>,
    /// CSV with `name` and `frequency` columns.
    #[arg(long)]
    pub frequency: Option<PathBuf>,
    /// Fill missing cells with column means.
    #[arg(long)]
    pub impute: bool,
}

pub fn export(ctx: &Context, args: &ExportArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("export")?;
    run.setting("impute", args.impute);
    let (mut table, set) = load_sr(&mut run, &args.sr, args.subgroups.as_deref())?;
    let frequency = match &args.frequency {
        Some(p) => {
            run.input("frequency", p)?;
            read_frequency(p)?
        }
        None => HashMap::new(),
    };
    let keys = set.key_index();
    for (name, slot) in table.names.iter().zip(table.annotations.iter_mut()) {
        let fresh = annotation(name, &keys, &frequency);
        *slot = match (slot.take(), fresh) {
            (Some(old), Some(new)) => Some(Annotation {
                race: if new.race.is_empty() { old.race } else { new.race },
                gender: if new.gender.is_empty() { old.gender } else { new.gender },
                token_length: if new.token_length.is_empty() { old.token_length } else { new.token_length },
                frequency: if new.frequency.is_empty() { old.frequency } else { new.frequency },
            }),
            (old, new) => new.or(old),
        };
    }
    if args.impute {
        let means = table.column_means();
        table.values = (0..table.names.len()).flat_map(|i| table.imputed_row(i, &means)).map(Some).collect();
    }
    let mut out = Vec::new();
    table.write_csv(&mut out)?;
    run.write_csv("vectors.csv", std::str::from_utf8(&out)?)?;
    run.finish()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ConformanceArgs {
    #[arg(long)]
    pub scorer: String,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 25)]
    pub batch: usize,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

pub fn conformance(ctx: &Context, args: &ConformanceArgs) -> anyhow::Result<()> {
    let mut run = ctx.run("conformance")?;
    let spec = ScorerSpec::parse(&args.scorer)?;
    if let Some(p) = spec.spec_file() {
        run.input("scorer_spec", p)?;
    }
    let timeout = Duration::from_secs(pick(args.timeout_secs, ctx.config.timeout_secs, DEFAULT_TIMEOUT_SECS));
    let scorer = spec.build(None, ctx.threads, timeout)?;
    run.setting("scorer", scorer.id());
    let report = run_conformance(scorer.as_ref(), args.n, args.batch)?;
    run.write_bytes("conformance.json", (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    run.finish()?;
    if !report.passed() {
        bail!(
            "conformance failed: {} missing, {} unknown, {} duplicate, {} malformed",
            report.missing.len(),
            report.unknown.len(),
            report.duplicates.len(),
            report.malformed.len()
        );
    }
    println!(
        "conformance passed: {} requests, {} responses{}",
        report.requests,
        report.responses,
        match report.deterministic {
            Some(false) => ", responses NOT deterministic",
            _ => "",
        }
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Any scorer spec; usually `synthetic:...`.
    #[arg(long)]
    pub scorer: String,
    /// Serve JSON lines on stdin/stdout.
    #[arg(long, conflicts_with = "http")]
    pub pipe: bool,
    /// Serve `POST /score` on this address (port 0 picks a free port).
    #[arg(long)]
    pub http: Option<String>,
    /// Subgroups for biased specs that name groups.
    #[arg(long)]
    pub subgroups: Option<PathBuf>,
}

pub fn serve(ctx: &Context, args: &ServeArgs) -> anyhow::Result<()> {
    let set = args.subgroups.as_deref().map(SubgroupSet::load).transpose()?;
    let timeout = Duration::from_secs(pick(None, ctx.config.timeout_secs, DEFAULT_TIMEOUT_SECS));
    let scorer: Arc<dyn namebias::scoring::Scorer> =
        Arc::from(ScorerSpec::parse(&args.scorer)?.build(set.as_ref(), ctx.threads, timeout)?);
    match (&args.http, args.pipe) {
        (Some(addr), _) => serve_http(scorer, addr, ctx.threads),
        (None, true) => serve_pipe(scorer.as_ref(), std::io::stdin().lock(), std::io::stdout().lock()),
        (None, false) => bail!("choose --pipe or --http <addr>"),
    }
}

fn load_tokenizer(run: &mut Run, spec: &str) -> anyhow::Result<Tokenizer> {
    let tokenizer = Tokenizer::from_spec(spec).with_context(|| format!("loading tokenizer {spec:?}"))?;
    let (_, files) = spec.split_once(':').unwrap_or(("", spec));
    for (i, f) in files.split(',').enumerate() {
        run.input(&format!("tokenizer_{i}"), Path::new(f))?;
    }
    run.manifest.tokenizer_id = Some(tokenizer.id().to_string());
    Ok(tokenizer)
}

/// Non-empty, non-comment lines; for CSV-like lines the first field.
fn read_list(path: &Path) -> anyhow::Result<Vec<String>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.to_string());
    }
    Ok(out)
}

/// Lowercased name → frequency from a CSV with `name` and `frequency` columns.
fn read_frequency(path: &Path) -> anyhow::Result<HashMap<String, String>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| anyhow!("{} has no {name} column", path.display()));
    let (n, f) = (col("name")?, col("frequency")?);
    let mut out = HashMap::new();
    for row in r.records() {
        let row = row?;
        out.insert(row[n].to_lowercase(), row[f].to_string());
    }
    Ok(out)
}

fn gender_label(g: Gender) -> &'static str {
    match g {
        Gender::Unassigned => "",
        g => g.label(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
