use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod run;

use config::{ModelKind, PipelineConfig};
use run::Failure;

#[derive(Parser)]
#[command(name = "threatcast", version, about = "Threat severity classification and CVE forecasting from tweets")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// Pipeline config file (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tweet ingestion, deduplication and splitting.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Crowd vote aggregation and agreement.
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Word embeddings.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Classifier training.
    Train(TrainArgs),
    /// Classifier evaluation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Tweet to CVE linking.
    #[command(subcommand)]
    Link(LinkCmd),
    /// CVE severity forecasting.
    #[command(subcommand)]
    Forecast(ForecastCmd),
    /// Lexical, temporal and per-account analyses.
    #[command(subcommand)]
    Insights(InsightsCmd),
}

#[derive(Subcommand)]
pub enum CorpusCmd {
    /// Validate raw tweets and write them with tokens.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Remove near-duplicates (same-day Jaccard, then LCS).
    Dedup {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Split labelled tweets into train/dev/test.
    Split {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum AnnotateCmd {
    /// Aggregate votes into per-tweet labels.
    Aggregate {
        #[arg(long)]
        votes: Option<PathBuf>,
    },
    /// Cohen's kappa between two `tweet_id,label` CSV files.
    Kappa {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Drop workers below the agreement threshold.
    FilterWorkers {
        #[arg(long)]
        votes: Option<PathBuf>,
        #[arg(long)]
        min_agreement: Option<f64>,
    },
}

#[derive(Subcommand)]
pub enum EmbedCmd {
    /// Train GloVe vectors on the tweet stream.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Nearest neighbours of a token.
    Neighbors {
        #[arg(long)]
        token: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Existence,
    Severity,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Existence => "existence",
            Task::Severity => "severity",
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub task: Task,
    #[arg(long, value_enum, default_value = "lr")]
    pub model: ModelKind,
}

#[derive(Subcommand)]
pub enum EvalCmd {
    /// Precision-recall curve and summary on a held-out split.
    Pr {
        #[arg(value_enum)]
        task: Task,
        #[arg(long, value_enum, default_value = "lr")]
        model: ModelKind,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

#[derive(Subcommand)]
pub enum LinkCmd {
    /// Link tweets to CVEs and apply the time constraints.
    Build {
        /// Fetch uncached URLs over the network.
        #[arg(long)]
        live: bool,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Random sample of links for manual inspection.
    Audit {
        #[arg(long, default_value_t = 50)]
        sample: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    Model,
    Volume,
    TrueCvss,
    Random,
}

#[derive(Subcommand)]
pub enum ForecastCmd {
    /// Rank linked CVEs.
    Rank {
        #[arg(long, value_enum, default_value = "model")]
        scorer: ScorerArg,
    },
    /// Rank and evaluate against CVSS and exploit lists.
    Eval {
        #[arg(long, value_enum, default_value = "model")]
        scorer: ScorerArg,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TruthArg {
    Cvss,
    Exploit,
}

#[derive(Subcommand)]
pub enum InsightsCmd {
    /// Lexicon adjectives ranked by log-odds of appearing in severe tweets.
    Adjectives {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Delay between first tweet and NVD publication.
    Temporal,
    /// Accounts whose severe warnings proved right.
    Accounts {
        #[arg(long, value_enum, default_value = "cvss")]
        truth: TruthArg,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p).map_err(run::usage)?,
        None => PipelineConfig::parse("", &std::env::current_dir()?).map_err(run::usage)?,
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.paths.output_dir = o.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = load_config(&cli.global).and_then(|cfg| commands::dispatch(cli.command, args, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("threatcast: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
