//! Micro/Macro-F1, prevalence/level/path breakdowns, report rendering and
//! the paired one-sided t-test used to compare model variants.

mod metrics;
mod report;
mod ttest;

use thiserror::Error;

pub use metrics::{
    f1_from_counts, f1_scores, level_breakdown, path_breakdown, path_count, prevalence_buckets, prevalence_groups,
    BucketScore, F1Scores, LabelScore, LevelScore, PathBreakdown, PathCount, PathGroup, MIN_PATH_GROUP,
};
pub use report::{LabelRow, MetricsReport};
pub use ttest::{ln_gamma, paired_one_sided_ttest, regularized_incomplete_beta, student_t_sf, TTest};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold is {gold:?} but predictions are {pred:?}")]
    Shape { gold: (usize, usize), pred: (usize, usize) },
    #[error("prevalence buckets need at least 5 labels, got {0}")]
    TooFewLabels(usize),
    #[error("frequency vector has {freq} entries for {labels} labels")]
    FrequencyLength { freq: usize, labels: usize },
    #[error("taxonomy has {taxonomy} labels, matrix has {labels}")]
    TaxonomySize { taxonomy: usize, labels: usize },
    #[error("t-test needs at least 2 paired runs, got {0}")]
    TooFewRuns(usize),
    #[error("unpaired score lists: {a} vs {b}")]
    Unpaired { a: usize, b: usize },
}
