//! Command-line interface: `gen-data`, `train`, `eval` and `compare`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration errors.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{compare, eval, gen_data, train, CompareReport, PairedRun, RunMeta, RunSummary};
pub use config::{resolve, RunConfig, SEED_ENV};

use crate::data::DataError;
use crate::eval::EvalError;
use crate::hierarchy::TaxonomyError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error("unpaired runs: {0}")]
    Unpaired(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl CliError {
    pub fn config(field: &str, message: String) -> Self {
        CliError::Config {
            field: field.to_string(),
            message,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Unpaired(_) => 2,
            CliError::Data(DataError::Spec(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "htla", version, about = "Hierarchical text classification with text-label alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic hierarchical corpus.
    GenData(GenDataArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a trained run on a JSON Lines split.
    Eval(EvalArgs),
    /// Paired one-sided t-tests between two sets of runs.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Children per node; one value, or one per level separated by commas.
    #[arg(long, default_value = "3")]
    pub branch: String,
    #[arg(long, default_value_t = 4)]
    pub keywords: usize,
    #[arg(long, default_value_t = 3)]
    pub words_per_label: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 200)]
    pub noise_vocab: usize,
    #[arg(long, default_value_t = 80)]
    pub samples_per_leaf: usize,
    #[arg(long, default_value_t = 0.3)]
    pub multipath: f64,
    /// Defaults to `HTLA_SEED`, then 7.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `desk` (default) or `paper`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub n_text_layers: Option<usize>,
    #[arg(long)]
    pub n_text_heads: Option<usize>,
    #[arg(long)]
    pub n_graph_heads: Option<usize>,
    #[arg(long)]
    pub d_p: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub text_dropout: Option<f64>,
    #[arg(long)]
    pub graph_dropout: Option<f64>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Train with BCE only.
    #[arg(long)]
    pub no_tla: bool,
    #[arg(long)]
    pub no_name_embedding: bool,
    #[arg(long)]
    pub no_node_embedding: bool,
    #[arg(long)]
    pub no_label_enhancer: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

impl TrainArgs {
    /// Flags that were given, as config `(key, value)` pairs.
    pub fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push("preset", self.preset.clone());
        push("taxonomy", path(&self.taxonomy));
        push("train", path(&self.train));
        push("val", path(&self.val));
        push("out", path(&self.out));
        push("seed", text(&self.seed));
        push("lr", text(&self.lr));
        push("beta1", text(&self.beta1));
        push("beta2", text(&self.beta2));
        push("eps", text(&self.eps));
        push("batch_size", text(&self.batch_size));
        push("tau", text(&self.tau));
        push("patience", text(&self.patience));
        push("max_epochs", text(&self.max_epochs));
        push("d_h", text(&self.d_h));
        push("n_text_layers", text(&self.n_text_layers));
        push("n_text_heads", text(&self.n_text_heads));
        push("n_graph_heads", text(&self.n_graph_heads));
        push("d_p", text(&self.d_p));
        push("max_len", text(&self.max_len));
        push("text_dropout", text(&self.text_dropout));
        push("graph_dropout", text(&self.graph_dropout));
        push("min_freq", text(&self.min_freq));
        push("max_vocab", text(&self.max_vocab));
        for (key, off) in [
            ("tla", self.no_tla),
            ("name_embedding", self.no_name_embedding),
            ("node_embedding", self.no_node_embedding),
            ("label_enhancer", self.no_label_enhancer),
        ] {
            if off {
                push(key, Some("false".to_string()));
            }
        }
        out
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// JSON Lines split to score.
    #[arg(long)]
    pub data: PathBuf,
    /// Split name used in the report; defaults to the data file stem.
    #[arg(long)]
    pub split: Option<String>,
    /// Taxonomy file; defaults to the copy stored in the run directory.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Report directory; defaults to `<run>/eval-<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Summary or report files (or run directories) of the first variant.
    #[arg(long, num_args = 1.., required = true)]
    pub a: Vec<PathBuf>,
    /// Summary or report files (or run directories) of the second variant.
    #[arg(long, num_args = 1.., required = true)]
    pub b: Vec<PathBuf>,
    #[arg(long, default_value = "A")]
    pub name_a: String,
    #[arg(long, default_value = "B")]
    pub name_b: String,
    /// Directory for compare.json and compare.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn text<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

/// Runs one command; `HTLA_SEED` is read from the process environment.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    match cli.command {
        Command::GenData(a) => gen_data(&a, env_seed.as_deref()).map(|_| ()),
        Command::Train(a) => train(&a, env_seed.as_deref()).map(|_| ()),
        Command::Eval(a) => eval(&a).map(|_| ()),
        Command::Compare(a) => compare(&a).map(|r| print!("{}", r.to_text())),
    }
}
