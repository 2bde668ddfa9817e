//! `nvae`: preprocessing, training, inference and evaluation from the shell.
//!
//! Failures print one JSON object on stderr,
//! `{"error":KIND,"flag":FLAG|null,"file":PATH|null,"message":TEXT}`,
//! and exit with status 2 (usage) or 1 (everything else).
//! `NVAE_LOG=quiet|info|debug` sets stderr verbosity (default `info`).

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: String,
    pub flag: Option<String>,
    pub file: Option<PathBuf>,
    pub message: String,
}

impl CliError {
    pub fn usage(flag: &str, message: impl Into<String>) -> Self {
        Self {
            error: "usage".into(),
            flag: Some(flag.into()),
            file: None,
            message: message.into(),
        }
    }

    pub fn file(kind: &str, path: &Path, message: impl Into<String>) -> Self {
        Self {
            error: kind.into(),
            flag: None,
            file: Some(path.to_path_buf()),
            message: message.into(),
        }
    }

    pub fn core(e: nvae::Error) -> Self {
        let (kind, file) = match &e {
            nvae::Error::Shape(_) => ("shape", None),
            nvae::Error::Domain(_) => ("domain", None),
            nvae::Error::DegenerateBatch(_) => ("degenerate_batch", None),
            nvae::Error::Input(_) => ("input", None),
            nvae::Error::Numerical(_) => ("numerical", None),
            nvae::Error::Parse { file, .. } => ("parse", Some(PathBuf::from(file))),
            nvae::Error::Checkpoint(_) => ("checkpoint", None),
            nvae::Error::Io { path, .. } => ("io", Some(path.clone())),
        };
        Self {
            error: kind.into(),
            flag: None,
            file,
            message: e.to_string(),
        }
    }

    /// Names the flag (and file) this error came from.
    pub fn at(mut self, flag: &str, path: Option<&Path>) -> Self {
        self.flag = Some(flag.into());
        if self.file.is_none() {
            self.file = path.map(Path::to_path_buf);
        }
        self
    }

    fn exit_code(&self) -> u8 {
        if self.error == "usage" {
            2
        } else {
            1
        }
    }
}

pub trait Context<T> {
    fn flag(self, flag: &str, path: Option<&Path>) -> Result<T, CliError>;
}

impl<T> Context<T> for nvae::Result<T> {
    fn flag(self, flag: &str, path: Option<&Path>) -> Result<T, CliError> {
        self.map_err(|e| CliError::core(e).at(flag, path))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verbosity {
    Quiet,
    Info,
    Debug,
}

pub fn verbosity() -> Verbosity {
    match std::env::var("NVAE_LOG").as_deref() {
        Ok("quiet") => Verbosity::Quiet,
        Ok("debug") => Verbosity::Debug,
        _ => Verbosity::Info,
    }
}

pub fn info(msg: &str) {
    if verbosity() >= Verbosity::Info {
        eprintln!("{msg}");
    }
}

#[derive(Parser, Debug)]
#[command(name = "nvae", version, about = "N-VAE topic model for short texts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lowercase, filter and drop empty documents.
    Prep(PrepArgs),
    /// Train the N-VAE and write a checkpoint plus metrics log.
    Train(TrainArgs),
    /// Collapsed Gibbs LDA baseline.
    Gibbs(GibbsArgs),
    /// Topic proportions and clusters from a checkpoint.
    Infer(InferArgs),
    /// Top words of every topic in a checkpoint.
    Topics(TopicsArgs),
    /// Clustering agreement or topic coherence.
    Eval(EvalArgs),
    /// Train with every batch-norm on/off combination and log gradients.
    Diag(DiagArgs),
    /// Generate a planted-topic corpus with labels and embeddings.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    /// Raw corpus, one document per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Labels aligned with the raw lines.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// One stopword per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub min_count: u32,
    /// Keep only words that have a vector in this file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Do not drop words missing from --embeddings.
    #[arg(long)]
    pub keep_oov: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Preprocessed corpus, one document per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Word vectors, `word x1 .. xD` per line.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub topics: usize,
    #[arg(long, default_value_t = 256)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Epochs before α is trained [default: half of --epochs].
    #[arg(long)]
    pub burn_in_epochs: Option<usize>,
    #[arg(long, default_value_t = 0.7)]
    pub min_tau: f64,
    /// Hidden layer widths of the context network.
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    pub layers: Vec<usize>,
    #[arg(long)]
    pub train_embeddings: bool,
    #[arg(long, default_value_t = 8e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Disable batch norm between the context network's layers.
    #[arg(long)]
    pub no_fc_bn: bool,
    /// Disable batch norm on the topic-word logits.
    #[arg(long)]
    pub no_beta_bn: bool,
    /// Log per-step gradient records.
    #[arg(long)]
    pub diagnostics: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DiagArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GibbsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub topics: usize,
    #[arg(long, default_value_t = 1500)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    /// Average estimates over the sweeps after this one.
    #[arg(long)]
    pub average_after: Option<usize>,
    #[arg(long, default_value_t = 15)]
    pub top_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Gumbel-Softmax temperature [default: the checkpoint's final one].
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TopicsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub top_n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nmi,
    Purity,
    Npmi,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    /// Cluster ids, one per line (nmi, purity).
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Labels, one per line (nmi, purity).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Topics file, one ranked word list per line (npmi).
    #[arg(long)]
    pub topics: Option<PathBuf>,
    /// Reference corpus for co-occurrence counts (npmi).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 15)]
    pub top_n: usize,
    /// Also write a key=value report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub topics: usize,
    #[arg(long, default_value_t = 200)]
    pub docs_per_topic: usize,
    #[arg(long, default_value_t = 12)]
    pub doc_length: usize,
    #[arg(long, default_value_t = 100)]
    pub vocab_per_topic: usize,
    #[arg(long, default_value_t = 10)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 5.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn clap_failure(e: clap::Error) -> CliError {
    let flag = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => s.split_whitespace().next().map(str::to_string),
        Some(ContextValue::Strings(v)) => v.first().and_then(|s| s.split_whitespace().next()).map(str::to_string),
        _ => None,
    };
    let rendered = e.render().to_string();
    let message = rendered
        .lines()
        .take_while(|l| !l.starts_with("Usage:"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .trim_start_matches("error: ")
        .to_string();
    CliError {
        error: "usage".into(),
        flag,
        file: None,
        message,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prep(a) => commands::prep(a),
        Command::Train(a) => commands::train(a),
        Command::Gibbs(a) => commands::gibbs(a),
        Command::Infer(a) => commands::infer(a),
        Command::Topics(a) => commands::topics(a),
        Command::Eval(a) => commands::eval(a),
        Command::Diag(a) => commands::diag(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = clap_failure(e);
            eprintln!("{}", serde_json::to_string(&err).expect("error serializes"));
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::to_string(&err).expect("error serializes"));
            ExitCode::from(err.exit_code())
        }
    }
}
