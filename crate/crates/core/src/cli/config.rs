//! Run configuration: presets, `key=value` files, `HTLA_SEED`, and flags.
//!
//! Precedence, lowest to highest: preset defaults, config file, `HTLA_SEED`,
//! command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::CliError;
use crate::model::{ModelConfig, TrainConfig};

pub const SEED_ENV: &str = "HTLA_SEED";

/// Keys accepted in config files (and, with dashes, as flags).
pub const KEYS: &[&str] = &[
    "preset",
    "taxonomy",
    "train",
    "val",
    "out",
    "seed",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "tau",
    "patience",
    "max_epochs",
    "tla",
    "d_h",
    "n_text_layers",
    "n_text_heads",
    "n_graph_heads",
    "d_p",
    "max_len",
    "text_dropout",
    "graph_dropout",
    "name_embedding",
    "node_embedding",
    "label_enhancer",
    "min_freq",
    "max_vocab",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: String,
    pub taxonomy: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub min_freq: usize,
    pub max_vocab: usize,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config("config", format!("line {}: expected key=value", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::config(&key, format!("line {}: unknown key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::config(key, format!("expected a boolean, got `{value}`"))),
    }
}

fn preset(name: &str) -> Result<(ModelConfig, TrainConfig), CliError> {
    match name {
        "desk" => Ok((ModelConfig::desk(), TrainConfig::desk())),
        "paper" => Ok((ModelConfig::paper(), TrainConfig::paper())),
        other => Err(CliError::config("preset", format!("unknown preset `{other}` (desk or paper)"))),
    }
}

#[derive(Default)]
struct Partial {
    taxonomy: Option<PathBuf>,
    train: Option<PathBuf>,
    val: Option<PathBuf>,
    out: Option<PathBuf>,
}

fn apply(key: &str, v: &str, m: &mut ModelConfig, t: &mut TrainConfig, p: &mut Partial, vocab: &mut (usize, usize)) -> Result<(), CliError> {
    match key {
        "preset" => {}
        "taxonomy" => p.taxonomy = Some(v.into()),
        "train" => p.train = Some(v.into()),
        "val" => p.val = Some(v.into()),
        "out" => p.out = Some(v.into()),
        "seed" => t.seed = parse(key, v)?,
        "lr" => t.lr = parse(key, v)?,
        "beta1" => t.beta1 = parse(key, v)?,
        "beta2" => t.beta2 = parse(key, v)?,
        "eps" => t.eps = parse(key, v)?,
        "batch_size" => t.batch_size = parse(key, v)?,
        "tau" => t.tau = parse(key, v)?,
        "patience" => t.patience = parse(key, v)?,
        "max_epochs" => t.max_epochs = parse(key, v)?,
        "tla" => t.tla_enabled = parse_bool(key, v)?,
        "d_h" => m.d_h = parse(key, v)?,
        "n_text_layers" => m.n_text_layers = parse(key, v)?,
        "n_text_heads" => m.n_text_heads = parse(key, v)?,
        "n_graph_heads" => m.n_graph_heads = parse(key, v)?,
        "d_p" => m.d_p = parse(key, v)?,
        "max_len" => m.max_len = parse(key, v)?,
        "text_dropout" => m.text_dropout = parse(key, v)?,
        "graph_dropout" => m.graph_dropout = parse(key, v)?,
        "name_embedding" => m.use_name_embedding = parse_bool(key, v)?,
        "node_embedding" => m.use_node_embedding = parse_bool(key, v)?,
        "label_enhancer" => m.use_label_enhancer = parse_bool(key, v)?,
        "min_freq" => vocab.0 = parse(key, v)?,
        "max_vocab" => vocab.1 = parse(key, v)?,
        other => return Err(CliError::config(other, "unknown key".to_string())),
    }
    Ok(())
}

/// Resolves a run configuration from file entries, the seed environment
/// value, and flag entries (all as `(key, value)` pairs).
pub fn resolve(
    file: &[(String, String)],
    env_seed: Option<&str>,
    flags: &[(String, String)],
) -> Result<RunConfig, CliError> {
    let preset_name = flags
        .iter()
        .chain(file)
        .find(|(k, _)| k == "preset")
        .map_or("desk", |(_, v)| v.as_str())
        .to_string();
    let (mut model, mut training) = preset(&preset_name)?;
    let mut paths = Partial::default();
    let mut vocab = (1usize, 30_000usize);
    for (k, v) in file {
        apply(k, v, &mut model, &mut training, &mut paths, &mut vocab)?;
    }
    if let Some(seed) = env_seed {
        training.seed = parse(SEED_ENV, seed)?;
    }
    for (k, v) in flags {
        apply(k, v, &mut model, &mut training, &mut paths, &mut vocab)?;
    }

    let required = |field: &str, p: Option<PathBuf>| p.ok_or_else(|| CliError::config(field, "missing required field".to_string()));
    let taxonomy = required("taxonomy", paths.taxonomy)?;
    let train = required("train", paths.train)?;
    let val = required("val", paths.val)?;
    let out = required("out", paths.out)?;
    for (field, path) in [("taxonomy", &taxonomy), ("train", &train), ("val", &val)] {
        require_file(field, path)?;
    }

    validate_model(&model)?;
    training
        .validate()
        .map_err(|e| CliError::config("training", e.to_string()))?;
    if vocab.1 == 0 {
        return Err(CliError::config("max_vocab", "must be positive".to_string()));
    }
    Ok(RunConfig {
        preset: preset_name,
        taxonomy,
        train,
        val,
        out,
        model,
        training,
        min_freq: vocab.0,
        max_vocab: vocab.1,
    })
}

pub fn require_file(field: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(field, format!("no such file: {}", path.display())))
    }
}

fn validate_model(m: &ModelConfig) -> Result<(), CliError> {
    for (field, heads) in [("n_text_heads", m.n_text_heads), ("n_graph_heads", m.n_graph_heads)] {
        if heads == 0 || m.d_h % heads != 0 {
            return Err(CliError::config(field, format!("must divide d_h={}", m.d_h)));
        }
    }
    if m.n_text_layers == 0 {
        return Err(CliError::config("n_text_layers", "must be positive".to_string()));
    }
    if m.d_p == 0 {
        return Err(CliError::config("d_p", "must be positive".to_string()));
    }
    if m.max_len < 2 {
        return Err(CliError::config("max_len", "must be at least 2".to_string()));
    }
    for (field, rate) in [("text_dropout", m.text_dropout), ("graph_dropout", m.graph_dropout)] {
        if !(0.0..1.0).contains(&rate) {
            return Err(CliError::config(field, format!("{rate} outside [0, 1)")));
        }
    }
    Ok(())
}
