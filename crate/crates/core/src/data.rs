//! Datasets: JSON Lines corpora, seeded synthetic hierarchies, label counts.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{LabelTaxonomy, ROOT_NAME};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: sample has no labels")]
    NoLabels { line: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

/// One text with its sorted, deduplicated label ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub text: String,
    pub labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    text: String,
    labels: Vec<String>,
}

impl Sample {
    /// The JSON Lines record for this sample, labels by name.
    pub fn to_json_line(&self, tax: &LabelTaxonomy) -> String {
        let record = Record {
            text: self.text.clone(),
            labels: self.labels.iter().map(|&l| tax.name(l).to_string()).collect(),
        };
        serde_json::to_string(&record).expect("sample serializes")
    }
}

/// Parses JSON Lines content; blank lines are skipped.
pub fn parse_jsonl(text: &str, tax: &LabelTaxonomy) -> Result<Vec<Sample>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(raw).map_err(|e| DataError::Json {
            line,
            message: e.to_string(),
        })?;
        if record.labels.is_empty() {
            return Err(DataError::NoLabels { line });
        }
        let mut labels = record
            .labels
            .iter()
            .map(|name| {
                tax.id_of(name).ok_or_else(|| DataError::UnknownLabel {
                    line,
                    label: name.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        labels.sort_unstable();
        labels.dedup();
        out.push(Sample {
            text: record.text,
            labels,
        });
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path, tax: &LabelTaxonomy) -> Result<Vec<Sample>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_jsonl(&text, tax)
}

/// One JSON object per line, newline-terminated.
pub fn to_jsonl(samples: &[Sample], tax: &LabelTaxonomy) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&s.to_json_line(tax));
        out.push('\n');
    }
    out
}

/// `count[k]` = number of samples carrying label `k`.
pub fn label_frequency(samples: &[Sample], num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; num_labels];
    for s in samples {
        for &l in &s.labels {
            counts[l] += 1;
        }
    }
    counts
}

/// Parameters of a synthetic hierarchical corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub depth: usize,
    /// Children per node at each level; a single entry applies to every level.
    pub branching: Vec<usize>,
    /// Distinct keywords owned by each label.
    pub keywords_per_label: usize,
    /// Keyword draws per positive label in each text.
    pub words_per_label: usize,
    /// Probability of inserting a noise token before each keyword.
    pub noise_rate: f64,
    /// Size of the noise vocabulary (disjoint from all keywords).
    pub noise_vocab: usize,
    pub samples_per_leaf: usize,
    /// Chance that a sample also carries a second, different leaf.
    pub multipath: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            depth: 3,
            branching: vec![3],
            keywords_per_label: 4,
            words_per_label: 3,
            noise_rate: 0.3,
            noise_vocab: 200,
            samples_per_leaf: 80,
            multipath: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.branching.is_empty() || (self.branching.len() != 1 && self.branching.len() != self.depth) {
            return bad(format!("branching needs 1 or {} entries", self.depth));
        }
        if self.branching.iter().any(|&b| b < 2) {
            return bad("branching must be at least 2".into());
        }
        if self.keywords_per_label == 0 || self.words_per_label == 0 {
            return bad("keywords_per_label and words_per_label must be positive".into());
        }
        for (name, v) in [("noise_rate", self.noise_rate), ("multipath", self.multipath)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.noise_rate > 0.0 && self.noise_vocab == 0 {
            return bad("noise_vocab must be positive when noise_rate > 0".into());
        }
        if self.samples_per_leaf == 0 {
            return bad("samples_per_leaf must be positive".into());
        }
        Ok(())
    }

    fn branching_at(&self, level: usize) -> usize {
        if self.branching.len() == 1 {
            self.branching[0]
        } else {
            self.branching[level]
        }
    }
}

/// Generated corpus: taxonomy text plus stratified splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub taxonomy: String,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Keyword `j` of label `l`; label names are their first keyword.
fn keyword(label: usize, j: usize) -> String {
    format!("t{label}k{j}")
}

fn noise_word(j: usize) -> String {
    format!("n{j}")
}

/// Builds a complete tree and samples texts from it. Deterministic in `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Breadth-first construction keeps generated ids equal to parsed ids.
    let mut taxonomy = String::new();
    let mut frontier: Vec<Option<usize>> = vec![None];
    let mut next = 0usize;
    for level in 0..spec.depth {
        let mut children = Vec::new();
        for parent in frontier {
            let kids: Vec<usize> = (0..spec.branching_at(level)).map(|i| next + i).collect();
            next += kids.len();
            taxonomy.push_str(&parent.map_or(ROOT_NAME.to_string(), |p| keyword(p, 0)));
            for &k in &kids {
                taxonomy.push('\t');
                taxonomy.push_str(&keyword(k, 0));
            }
            taxonomy.push('\n');
            children.extend(kids.into_iter().map(Some));
        }
        frontier = children;
    }
    let tax = LabelTaxonomy::parse(&taxonomy).expect("generated taxonomy is valid");
    let leaves = tax.leaves();

    let mut splits = [Vec::new(), Vec::new(), Vec::new()];
    for &leaf in &leaves {
        let mut group = Vec::with_capacity(spec.samples_per_leaf);
        for _ in 0..spec.samples_per_leaf {
            let mut chosen = vec![leaf];
            if leaves.len() > 1 && rng.random::<f64>() < spec.multipath {
                let others: Vec<usize> = leaves.iter().copied().filter(|&l| l != leaf).collect();
                chosen.push(*others.choose(&mut rng).expect("at least one other leaf"));
            }
            let mut labels: Vec<usize> = chosen.iter().flat_map(|&l| std::iter::once(l).chain(tax.ancestors(l))).collect();
            labels.sort_unstable();
            labels.dedup();
            let text = sample_text(spec, &labels, &mut rng);
            group.push(Sample { text, labels });
        }
        let n = group.len();
        let n_train = (n as f64 * 0.7).round() as usize;
        let n_val = ((n as f64 * 0.15).round() as usize).min(n - n_train);
        let mut rest = group.split_off(n_train);
        let test = rest.split_off(n_val);
        splits[0].extend(group);
        splits[1].extend(rest);
        splits[2].extend(test);
    }
    for split in splits.iter_mut() {
        split.shuffle(&mut rng);
    }
    let [train, val, test] = splits;
    Ok(SyntheticData {
        taxonomy,
        train,
        val,
        test,
    })
}

fn sample_text(spec: &SyntheticSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> String {
    let mut words = Vec::new();
    for &l in labels {
        for _ in 0..spec.words_per_label {
            words.push(keyword(l, rng.random_range(0..spec.keywords_per_label)));
        }
    }
    words.shuffle(rng);
    let mut out = Vec::with_capacity(words.len() * 2);
    for w in words {
        if rng.random::<f64>() < spec.noise_rate {
            out.push(noise_word(rng.random_range(0..spec.noise_vocab)));
        }
        out.push(w);
    }
    out.join(" ")
}
