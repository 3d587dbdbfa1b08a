mod commands;
mod config;
mod output;
mod scorers;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Context;
use config::{pick, Config};

/// Audits multiple-choice scorers for first-name bias.
#[derive(Parser, Debug)]
#[command(name = "namebias", version)]
struct Cli {
    /// Seed for sampling, permutations and augmentation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter the name table and assign genders.
    Names(commands::NamesArgs),
    /// Tokenization length against race and gender.
    Tokenstats(commands::TokenstatsArgs),
    /// Sample names into race × gender × length subgroups.
    Subgroups(commands::SubgroupsArgs),
    /// Spot names in MCQs and build distractor pools.
    Distract(commands::DistractArgs),
    /// Score every (MCQ, name, distractor) instance.
    Score(commands::ScoreArgs),
    /// Success-rate vectors from score records.
    Srmatrix(commands::SrmatrixArgs),
    /// Membership prediction and permutation test for one pair of groups.
    Membership(commands::MembershipArgs),
    /// Membership tests over a plan of group pairs.
    Heatmap(commands::HeatmapArgs),
    /// Name-balanced augmentation of training MCQs.
    Cda(commands::CdaArgs),
    /// Annotated SR vectors for external analysis.
    Export(commands::ExportArgs),
    /// Check a scorer against the wire protocol.
    Conformance(commands::ConformanceArgs),
    /// Serve a scorer over the wire protocol.
    Serve(commands::ServeArgs),
}

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_COVERAGE: u8 = 3;

#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    // clap prints usage and exits with 2 on bad arguments
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if matches!(cause.downcast_ref(), Some(namebias::Error::CoverageBelowFloor { .. })) {
            return EXIT_COVERAGE;
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_FAILURE
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p).map_err(UsageError)?,
        None => Config::default(),
    };
    let threads = pick(cli.threads, config.threads, 0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let ctx = Context {
        seed: pick(cli.seed, config.seed, 0),
        threads: rayon::current_num_threads(),
        out_dir: cli.out_dir,
        config,
    };
    match &cli.command {
        Command::Names(a) => commands::names(&ctx, a),
        Command::Tokenstats(a) => commands::tokenstats(&ctx, a),
        Command::Subgroups(a) => commands::subgroups(&ctx, a),
        Command::Distract(a) => commands::distract(&ctx, a),
        Command::Score(a) => commands::score(&ctx, a),
        Command::Srmatrix(a) => commands::srmatrix(&ctx, a),
        Command::Membership(a) => commands::membership(&ctx, a),
        Command::Heatmap(a) => commands::heatmap(&ctx, a),
        Command::Cda(a) => commands::cda(&ctx, a),
        Command::Export(a) => commands::export(&ctx, a),
        Command::Conformance(a) => commands::conformance(&ctx, a),
        Command::Serve(a) => commands::serve(&ctx, a),
    }
}
