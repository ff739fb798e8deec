use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{
    f1_scores, level_breakdown, path_breakdown, prevalence_buckets, BucketScore, LevelScore, PathBreakdown,
};
use super::EvalError;
use crate::hierarchy::LabelTaxonomy;
use crate::labels::LabelMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelRow {
    pub id: usize,
    pub name: String,
    pub level: usize,
    pub train_frequency: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
}

/// Full evaluation of one split: headline scores and the three breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub num_samples: usize,
    pub num_labels: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Empty when there are fewer than five labels.
    pub prevalence: Vec<BucketScore>,
    pub levels: Vec<LevelScore>,
    pub paths: PathBreakdown,
    pub per_label: Vec<LabelRow>,
}

impl MetricsReport {
    /// `train_frequency` orders labels for the prevalence buckets.
    pub fn build(
        split: &str,
        tax: &LabelTaxonomy,
        train_frequency: &[usize],
        gold: &LabelMatrix,
        pred: &LabelMatrix,
    ) -> Result<Self, EvalError> {
        let scores = f1_scores(gold, pred)?;
        let prevalence = match prevalence_buckets(train_frequency, gold, pred) {
            Ok(b) => b,
            Err(EvalError::TooFewLabels(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        let levels = level_breakdown(tax, gold, pred)?;
        let paths = path_breakdown(tax, gold, pred)?;
        let per_label = scores
            .per_label
            .iter()
            .enumerate()
            .map(|(id, s)| LabelRow {
                id,
                name: tax.name(id).to_string(),
                level: tax.label_level(id),
                train_frequency: train_frequency[id],
                tp: s.tp,
                fp: s.fp,
                fn_: s.fn_,
                f1: s.f1,
            })
            .collect();
        Ok(Self {
            split: split.to_string(),
            seed: None,
            num_samples: gold.num_rows(),
            num_labels: gold.num_cols(),
            micro_f1: scores.micro_f1,
            macro_f1: scores.macro_f1,
            prevalence,
            levels,
            paths,
            per_label,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split      {}", self.split);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed       {seed}");
        }
        let _ = writeln!(out, "samples    {}", self.num_samples);
        let _ = writeln!(out, "labels     {}", self.num_labels);
        let _ = writeln!(out, "micro_f1   {:.4}", self.micro_f1);
        let _ = writeln!(out, "macro_f1   {:.4}", self.macro_f1);

        if !self.prevalence.is_empty() {
            let _ = writeln!(out, "\n{:<8} {:>7} {:>9}", "bucket", "labels", "macro_f1");
            for b in &self.prevalence {
                let _ = writeln!(out, "{:<8} {:>7} {:>9.4}", b.name, b.labels.len(), b.macro_f1);
            }
        }

        let _ = writeln!(out, "\n{:<8} {:>7} {:>9} {:>9}", "level", "labels", "micro_f1", "macro_f1");
        for l in &self.levels {
            let _ = writeln!(out, "{:<8} {:>7} {:>9.4} {:>9.4}", l.level, l.num_labels, l.micro_f1, l.macro_f1);
        }

        let _ = writeln!(out, "\n{:<8} {:>7} {:>9} {:>9}", "paths", "samples", "micro_f1", "macro_f1");
        for g in &self.paths.groups {
            let _ = writeln!(out, "{:<8} {:>7} {:>9.4} {:>9.4}", g.name, g.num_samples, g.micro_f1, g.macro_f1);
        }
        if self.paths.not_ancestor_closed > 0 {
            let _ = writeln!(out, "warning: {} gold sets are not ancestor-closed", self.paths.not_ancestor_closed);
        }

        let width = self.per_label.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "\n{:<width$} {:>5} {:>6} {:>6} {:>6} {:>6} {:>7}",
            "label", "level", "train", "tp", "fp", "fn", "f1"
        );
        for r in &self.per_label {
            let _ = writeln!(
                out,
                "{:<width$} {:>5} {:>6} {:>6} {:>6} {:>6} {:>7.4}",
                r.name, r.level, r.train_frequency, r.tp, r.fp, r.fn_, r.f1
            );
        }
        out
    }

    pub fn prevalence_csv(&self) -> String {
        let mut out = String::from("bucket,num_labels,macro_f1\n");
        for b in &self.prevalence {
            let _ = writeln!(out, "{},{},{}", b.name, b.labels.len(), b.macro_f1);
        }
        out
    }

    pub fn level_csv(&self) -> String {
        let mut out = String::from("level,num_labels,micro_f1,macro_f1\n");
        for l in &self.levels {
            let _ = writeln!(out, "{},{},{},{}", l.level, l.num_labels, l.micro_f1, l.macro_f1);
        }
        out
    }

    pub fn path_csv(&self) -> String {
        let mut out = String::from("path_count,num_samples,micro_f1,macro_f1\n");
        for g in &self.paths.groups {
            let _ = writeln!(out, "{},{},{},{}", g.name, g.num_samples, g.micro_f1, g.macro_f1);
        }
        out
    }
}
