use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{self, parse_config_file, require_file, RunConfig};
use super::{CliError, CompareArgs, EvalArgs, GenDataArgs, TrainArgs};
use crate::data::{self, label_frequency, load_jsonl, SyntheticSpec};
use crate::eval::{paired_one_sided_ttest, MetricsReport, TTest};
use crate::hierarchy::LabelTaxonomy;
use crate::model::{fit, EncodedSplit, HtlaModel, ModelConfig, TrainConfig};
use crate::numerics::{read_checkpoint, write_checkpoint};
use crate::text::Vocabulary;

const PREDICT_CHUNK: usize = 64;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a SyntheticSpec,
    num_labels: usize,
    depth: usize,
    train: usize,
    val: usize,
    test: usize,
}

/// Writes `taxonomy.tsv`, `train.jsonl`, `val.jsonl`, `test.jsonl` and
/// `manifest.json` under `args.out`.
pub fn gen_data(args: &GenDataArgs, env_seed: Option<&str>) -> Result<SyntheticSpec, CliError> {
    let branching = args
        .branch
        .split(',')
        .map(|b| b.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::config("branch", e.to_string()))?;
    let seed = match (args.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse().map_err(|e| CliError::config(config::SEED_ENV, format!("{e}")))?,
        (None, None) => 7,
    };
    let spec = SyntheticSpec {
        depth: args.depth,
        branching,
        keywords_per_label: args.keywords,
        words_per_label: args.words_per_label,
        noise_rate: args.noise,
        noise_vocab: args.noise_vocab,
        samples_per_leaf: args.samples_per_leaf,
        multipath: args.multipath,
        seed,
    };
    let generated = data::generate_synthetic(&spec)?;
    let tax = LabelTaxonomy::parse(&generated.taxonomy)?;
    create_dir(&args.out)?;
    write(&args.out.join("taxonomy.tsv"), &generated.taxonomy)?;
    for (name, split) in [("train", &generated.train), ("val", &generated.val), ("test", &generated.test)] {
        write(&args.out.join(format!("{name}.jsonl")), data::to_jsonl(split, &tax))?;
    }
    let manifest = Manifest {
        spec: &spec,
        num_labels: tax.num_labels(),
        depth: tax.depth(),
        train: generated.train.len(),
        val: generated.val.len(),
        test: generated.test.len(),
    };
    write(&args.out.join("manifest.json"), to_json(&manifest))?;
    println!(
        "{} labels, {} train / {} val / {} test samples -> {}",
        manifest.num_labels,
        manifest.train,
        manifest.val,
        manifest.test,
        args.out.display()
    );
    Ok(spec)
}

/// Everything `eval` needs to rebuild a trained model (`model.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub preset: String,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub vocab_size: usize,
    pub num_labels: usize,
    pub min_freq: usize,
    pub max_vocab: usize,
    pub train_label_frequency: Vec<usize>,
}

/// `summary.json`; scores are those of the best validation epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub tla_enabled: bool,
    pub use_name_embedding: bool,
    pub use_node_embedding: bool,
    pub use_label_enhancer: bool,
}

/// Resolves the configuration, fits, and writes the run directory:
/// `model.ckpt`, `vocab.txt`, `taxonomy.tsv`, `model.json`, `history.jsonl`,
/// `timing.jsonl` and `summary.json`.
pub fn train(args: &TrainArgs, env_seed: Option<&str>) -> Result<(RunConfig, RunSummary), CliError> {
    let file = match &args.config {
        Some(path) => {
            require_file("config", path)?;
            parse_config_file(&read(path)?)?
        }
        None => Vec::new(),
    };
    let cfg = config::resolve(&file, env_seed, &args.overrides())?;
    let tax_text = read(&cfg.taxonomy)?;
    let tax = LabelTaxonomy::parse(&tax_text)?;
    let train_samples = load_jsonl(&cfg.train, &tax)?;
    let val_samples = load_jsonl(&cfg.val, &tax)?;
    let vocab = Vocabulary::build(train_samples.iter().map(|s| s.text.as_str()), cfg.min_freq, cfg.max_vocab)?;
    let k = tax.num_labels();
    let (model, mut store) = HtlaModel::new(cfg.model, &tax, &vocab, cfg.training.seed)?;
    let train_split = EncodedSplit::new(&train_samples, &vocab, cfg.model.max_len, k);
    let val_split = EncodedSplit::new(&val_samples, &vocab, cfg.model.max_len, k);

    let quiet = args.quiet;
    let outcome = fit(&model, &mut store, &train_split, &val_split, &cfg.training, |r, secs| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  bce {:.4}  tla {:.4}  val MiF1 {:.4}  MaF1 {:.4}  {:.1}s",
                r.epoch, r.loss_bce, r.loss_tla, r.val_micro_f1, r.val_macro_f1, secs
            );
        }
    })?;

    create_dir(&cfg.out)?;
    write_checkpoint(&cfg.out.join("model.ckpt"), &store)?;
    write(&cfg.out.join("vocab.txt"), vocab.to_file_string())?;
    write(&cfg.out.join("taxonomy.tsv"), &tax_text)?;
    let meta = RunMeta {
        preset: cfg.preset.clone(),
        model: cfg.model,
        training: cfg.training,
        vocab_size: vocab.len(),
        num_labels: k,
        min_freq: cfg.min_freq,
        max_vocab: cfg.max_vocab,
        train_label_frequency: label_frequency(&train_samples, k),
    };
    write(&cfg.out.join("model.json"), to_json(&meta))?;
    let mut history = String::new();
    let mut timing = String::new();
    for (r, secs) in outcome.history.iter().zip(&outcome.epoch_seconds) {
        history.push_str(&serde_json::to_string(r).expect("record serializes"));
        history.push('\n');
        let _ = writeln!(timing, "{{\"epoch\":{},\"seconds\":{secs}}}", r.epoch);
    }
    write(&cfg.out.join("history.jsonl"), history)?;
    write(&cfg.out.join("timing.jsonl"), timing)?;
    let summary = RunSummary {
        seed: cfg.training.seed,
        micro_f1: outcome.best_val_micro_f1,
        macro_f1: outcome.best_val_macro_f1,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        stopped_early: outcome.stopped_early,
        tla_enabled: cfg.training.tla_enabled,
        use_name_embedding: cfg.model.use_name_embedding,
        use_node_embedding: cfg.model.use_node_embedding,
        use_label_enhancer: cfg.model.use_label_enhancer,
    };
    write(&cfg.out.join("summary.json"), to_json(&summary))?;
    if !quiet {
        eprintln!(
            "best epoch {} of {}: val MiF1 {:.4} MaF1 {:.4} -> {}",
            summary.best_epoch,
            summary.epochs_run,
            summary.micro_f1,
            summary.macro_f1,
            cfg.out.display()
        );
    }
    Ok((cfg, summary))
}

/// Scores a split with a trained run and writes `report.json`, `report.txt`,
/// `prevalence.csv`, `levels.csv` and `paths.csv`.
pub fn eval(args: &EvalArgs) -> Result<MetricsReport, CliError> {
    let meta: RunMeta = from_json(&args.run.join("model.json"))?;
    let tax_path = args.taxonomy.clone().unwrap_or_else(|| args.run.join("taxonomy.tsv"));
    require_file("taxonomy", &tax_path)?;
    require_file("data", &args.data)?;
    let tax = LabelTaxonomy::parse(&read(&tax_path)?)?;
    let vocab = Vocabulary::from_file_str(&read(&args.run.join("vocab.txt"))?)?;
    let (model, mut store) = HtlaModel::new(meta.model, &tax, &vocab, 0)?;
    store.load_values(read_checkpoint(&args.run.join("model.ckpt"))?)?;
    let samples = load_jsonl(&args.data, &tax)?;
    let split = EncodedSplit::new(&samples, &vocab, meta.model.max_len, tax.num_labels());
    let pred = model.predict(&store, &split.sequences, PREDICT_CHUNK)?;

    let name = args.split.clone().unwrap_or_else(|| {
        args.data
            .file_stem()
            .map_or("split".to_string(), |s| s.to_string_lossy().into_owned())
    });
    let mut report = MetricsReport::build(&name, &tax, &meta.train_label_frequency, &split.gold, &pred.predicted)?;
    report.seed = Some(meta.training.seed);

    let out = args.out.clone().unwrap_or_else(|| args.run.join(format!("eval-{name}")));
    create_dir(&out)?;
    write(&out.join("report.json"), report.to_json())?;
    write(&out.join("report.txt"), report.to_text())?;
    write(&out.join("prevalence.csv"), report.prevalence_csv())?;
    write(&out.join("levels.csv"), report.level_csv())?;
    write(&out.join("paths.csv"), report.path_csv())?;
    println!(
        "{name}: {} samples, MiF1 {:.4}, MaF1 {:.4} -> {}",
        report.num_samples,
        report.micro_f1,
        report.macro_f1,
        out.display()
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRun {
    pub seed: u64,
    pub a_micro_f1: f64,
    pub a_macro_f1: f64,
    pub b_micro_f1: f64,
    pub b_macro_f1: f64,
}

/// Paired comparison of two variants; tests `H1: A > B` on each metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub name_a: String,
    pub name_b: String,
    pub runs: Vec<PairedRun>,
    pub mean_a_micro_f1: f64,
    pub mean_a_macro_f1: f64,
    pub mean_b_micro_f1: f64,
    pub mean_b_macro_f1: f64,
    pub micro_f1: TTest,
    pub macro_f1: TTest,
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6}  {:>10} {:>10}  {:>10} {:>10}",
            "seed",
            format!("{} MiF1", self.name_a),
            format!("{} MaF1", self.name_a),
            format!("{} MiF1", self.name_b),
            format!("{} MaF1", self.name_b)
        );
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{:>6}  {:>10.4} {:>10.4}  {:>10.4} {:>10.4}",
                r.seed, r.a_micro_f1, r.a_macro_f1, r.b_micro_f1, r.b_macro_f1
            );
        }
        let _ = writeln!(
            out,
            "{:>6}  {:>10.4} {:>10.4}  {:>10.4} {:>10.4}",
            "mean", self.mean_a_micro_f1, self.mean_a_macro_f1, self.mean_b_micro_f1, self.mean_b_macro_f1
        );
        let _ = writeln!(out);
        for (metric, t) in [("MiF1", &self.micro_f1), ("MaF1", &self.macro_f1)] {
            let stat = t.t.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{metric}  {} > {}: mean diff {:+.4}, t {stat}, df {}, p {:.6}",
                self.name_a, self.name_b, t.mean_diff, t.df, t.p_value
            );
        }
        out
    }
}

#[derive(Deserialize)]
struct Scored {
    seed: u64,
    micro_f1: f64,
    macro_f1: f64,
}

fn load_scores(paths: &[PathBuf]) -> Result<Vec<Scored>, CliError> {
    let mut runs = paths
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join("summary.json") } else { p.clone() };
            from_json::<Scored>(&file)
        })
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|r| r.seed);
    if let Some(w) = runs.windows(2).find(|w| w[0].seed == w[1].seed) {
        return Err(CliError::Unpaired(format!("seed {} appears twice in one variant", w[0].seed)));
    }
    Ok(runs)
}

/// Pairs runs of two variants by seed and tests whether A beats B.
pub fn compare(args: &CompareArgs) -> Result<CompareReport, CliError> {
    let a = load_scores(&args.a)?;
    let b = load_scores(&args.b)?;
    let seeds_a: Vec<u64> = a.iter().map(|r| r.seed).collect();
    let seeds_b: Vec<u64> = b.iter().map(|r| r.seed).collect();
    if seeds_a != seeds_b {
        return Err(CliError::Unpaired(format!("seeds {seeds_a:?} vs {seeds_b:?}")));
    }
    let pick = |runs: &[Scored], f: fn(&Scored) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let (ami, ama) = (pick(&a, |r| r.micro_f1), pick(&a, |r| r.macro_f1));
    let (bmi, bma) = (pick(&b, |r| r.micro_f1), pick(&b, |r| r.macro_f1));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let report = CompareReport {
        name_a: args.name_a.clone(),
        name_b: args.name_b.clone(),
        runs: a
            .iter()
            .zip(&b)
            .map(|(x, y)| PairedRun {
                seed: x.seed,
                a_micro_f1: x.micro_f1,
                a_macro_f1: x.macro_f1,
                b_micro_f1: y.micro_f1,
                b_macro_f1: y.macro_f1,
            })
            .collect(),
        mean_a_micro_f1: mean(&ami),
        mean_a_macro_f1: mean(&ama),
        mean_b_micro_f1: mean(&bmi),
        mean_b_macro_f1: mean(&bma),
        micro_f1: paired_one_sided_ttest(&ami, &bmi)?,
        macro_f1: paired_one_sided_ttest(&ama, &bma)?,
    };
    if let Some(out) = &args.out {
        create_dir(out)?;
        write(&out.join("compare.json"), report.to_json())?;
        write(&out.join("compare.txt"), report.to_text())?;
    }
    Ok(report)
}
