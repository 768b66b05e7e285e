//! `qbestd`: synthetic corpus generation, feature extraction, embedding
//! training, keyword search and evaluation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use awe_qbe::dtw::Fusion;
use awe_qbe::model::SoftmaxMode;
use clap::{Parser, Subcommand};

use config::RunConfig;
use error::{CliError, Result};

#[derive(Parser)]
#[command(name = "qbestd", version, about = "Query-by-example spoken term detection pipeline")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory holding corpus/, features/, models/, results/, reports/.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Seed for corpus generation and model training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Search system: awe or sdtw.
    #[arg(long, global = true)]
    system: Option<String>,
    #[arg(long, global = true)]
    templates_per_keyword: Option<usize>,
    /// Weight of the variability-invariant loss.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Classifier normalization: one or block.
    #[arg(long, global = true)]
    softmax: Option<SoftmaxMode>,
    /// Template fusion for the sdtw system: none or dtw.
    #[arg(long, global = true)]
    fusion: Option<Fusion>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Extract log Mel features from a directory of WAV files.
    Featurize {
        #[arg(long)]
        wav_dir: PathBuf,
    },
    /// Train the embedding network on the corpus.
    Train,
    /// Embed keyword templates (and optionally utterance windows).
    Embed {
        #[arg(long)]
        windows: bool,
    },
    /// Rank utterances for every keyword.
    Search {
        /// Also write per-utterance score traces.
        #[arg(long)]
        traces: bool,
    },
    /// Score search results against the ground truth.
    Eval,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Featurize { .. } => "featurize",
            Command::Train => "train",
            Command::Embed { .. } => "embed",
            Command::Search { .. } => "search",
            Command::Eval => "eval",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(w) = &cli.workdir {
        cfg.workdir = w.clone();
    }
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(s) = &cli.system {
        cfg.system = s.clone();
    }
    if let Some(n) = cli.templates_per_keyword {
        cfg.templates_per_keyword = n;
    }
    if let Some(a) = cli.alpha {
        cfg.model.alpha = a;
    }
    if let Some(m) = cli.softmax {
        cfg.model.softmax_mode = m;
    }
    if let Some(f) = cli.fusion {
        cfg.fusion = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Synth => commands::cmd_synth(&cfg),
        Command::Featurize { wav_dir } => commands::cmd_featurize(&cfg, wav_dir),
        Command::Train => commands::cmd_train(&cfg),
        Command::Embed { windows } => commands::cmd_embed(&cfg, *windows),
        Command::Search { traces } => commands::cmd_search(&cfg, *traces),
        Command::Eval => commands::cmd_eval(&cfg).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let rec = e.record(cli.command.name());
            eprintln!("{}", serde_json::to_string(&rec).expect("error record serializes"));
            ExitCode::FAILURE
        }
    }
}
