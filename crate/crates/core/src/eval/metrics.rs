use serde::Serialize;

use super::EvalError;
use crate::hierarchy::LabelTaxonomy;
use crate::labels::LabelMatrix;

/// Smallest path-count group reported on its own.
pub const MIN_PATH_GROUP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Scores {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_label: Vec<LabelScore>,
}

/// `2tp / (2tp + fp + fn)`, with 0/0 scored as 0.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn check_shapes(gold: &LabelMatrix, pred: &LabelMatrix) -> Result<(), EvalError> {
    let (g, p) = ((gold.num_rows(), gold.num_cols()), (pred.num_rows(), pred.num_cols()));
    if g != p {
        return Err(EvalError::Shape { gold: g, pred: p });
    }
    Ok(())
}

/// Per-label confusion counts, Micro-F1 over summed counts and Macro-F1 as
/// the unweighted mean of per-label F1.
pub fn f1_scores(gold: &LabelMatrix, pred: &LabelMatrix) -> Result<F1Scores, EvalError> {
    check_shapes(gold, pred)?;
    let k = gold.num_cols();
    let mut counts = vec![(0usize, 0usize, 0usize); k];
    for r in 0..gold.num_rows() {
        for (c, (&g, &p)) in gold.row(r).iter().zip(pred.row(r)).enumerate() {
            match (g, p) {
                (true, true) => counts[c].0 += 1,
                (false, true) => counts[c].1 += 1,
                (true, false) => counts[c].2 += 1,
                (false, false) => {}
            }
        }
    }
    let per_label: Vec<LabelScore> = counts
        .iter()
        .map(|&(tp, fp, fn_)| LabelScore {
            tp,
            fp,
            fn_,
            f1: f1_from_counts(tp, fp, fn_),
        })
        .collect();
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let macro_f1 = if k == 0 {
        0.0
    } else {
        per_label.iter().map(|s| s.f1).sum::<f64>() / k as f64
    };
    Ok(F1Scores {
        micro_f1: f1_from_counts(tp, fp, fn_),
        macro_f1,
        per_label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketScore {
    /// `P1` (most prevalent) through `P5`.
    pub name: String,
    pub labels: Vec<usize>,
    pub macro_f1: f64,
}

/// Splits labels into five prevalence groups by descending training
/// frequency (ties by lower id); earlier groups absorb the remainder.
pub fn prevalence_groups(freq: &[usize]) -> Result<Vec<Vec<usize>>, EvalError> {
    let k = freq.len();
    if k < 5 {
        return Err(EvalError::TooFewLabels(k));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    let (base, extra) = (k / 5, k % 5);
    let mut groups = Vec::with_capacity(5);
    let mut start = 0;
    for g in 0..5 {
        let size = base + usize::from(g < extra);
        groups.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(groups)
}

/// Macro-F1 restricted to each prevalence group.
pub fn prevalence_buckets(freq: &[usize], gold: &LabelMatrix, pred: &LabelMatrix) -> Result<Vec<BucketScore>, EvalError> {
    check_shapes(gold, pred)?;
    if freq.len() != gold.num_cols() {
        return Err(EvalError::FrequencyLength {
            freq: freq.len(),
            labels: gold.num_cols(),
        });
    }
    prevalence_groups(freq)?
        .into_iter()
        .enumerate()
        .map(|(g, labels)| {
            let s = f1_scores(&gold.select_cols(&labels), &pred.select_cols(&labels))?;
            Ok(BucketScore {
                name: format!("P{}", g + 1),
                labels,
                macro_f1: s.macro_f1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelScore {
    pub level: usize,
    pub num_labels: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Scores over the label columns of each hierarchy level.
pub fn level_breakdown(tax: &LabelTaxonomy, gold: &LabelMatrix, pred: &LabelMatrix) -> Result<Vec<LevelScore>, EvalError> {
    check_shapes(gold, pred)?;
    if gold.num_cols() != tax.num_labels() {
        return Err(EvalError::TaxonomySize {
            taxonomy: tax.num_labels(),
            labels: gold.num_cols(),
        });
    }
    (1..=tax.depth())
        .map(|level| {
            let cols: Vec<usize> = (0..tax.num_labels()).filter(|&l| tax.label_level(l) == level).collect();
            let s = f1_scores(&gold.select_cols(&cols), &pred.select_cols(&cols))?;
            Ok(LevelScore {
                level,
                num_labels: cols.len(),
                micro_f1: s.micro_f1,
                macro_f1: s.macro_f1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathCount {
    pub count: usize,
    /// False when some label's parent is missing from the set.
    pub ancestor_closed: bool,
}

/// Number of maximal labels in `set` (labels with no child in the set).
pub fn path_count(tax: &LabelTaxonomy, set: &[usize]) -> PathCount {
    let member = |l: usize| set.contains(&l);
    let count = set
        .iter()
        .filter(|&&l| !tax.children(l).iter().any(|&c| member(c)))
        .count();
    let ancestor_closed = set
        .iter()
        .all(|&l| tax.parent(l).is_none_or(|p| p == tax.root() || member(p)));
    PathCount { count, ancestor_closed }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathGroup {
    /// Display name: the path count, or `lo-hi` for merged groups.
    pub name: String,
    pub path_counts: Vec<usize>,
    pub num_samples: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathBreakdown {
    pub groups: Vec<PathGroup>,
    /// Samples whose gold set was not ancestor-closed.
    pub not_ancestor_closed: usize,
}

/// Groups samples by gold path count and scores each group's rows.
/// Groups under [`MIN_PATH_GROUP`] samples are merged into the next larger
/// count; a small tail is merged into the last emitted group.
pub fn path_breakdown(tax: &LabelTaxonomy, gold: &LabelMatrix, pred: &LabelMatrix) -> Result<PathBreakdown, EvalError> {
    check_shapes(gold, pred)?;
    let mut by_count: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut not_ancestor_closed = 0;
    for r in 0..gold.num_rows() {
        let pc = path_count(tax, &gold.positives(r));
        not_ancestor_closed += usize::from(!pc.ancestor_closed);
        by_count.entry(pc.count).or_default().push(r);
    }
    let mut merged: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut pending: (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
    for (count, rows) in by_count {
        pending.0.push(count);
        pending.1.extend(rows);
        if pending.1.len() >= MIN_PATH_GROUP {
            merged.push(std::mem::take(&mut pending));
        }
    }
    if !pending.0.is_empty() {
        match merged.last_mut() {
            Some(last) => {
                last.0.extend(pending.0);
                last.1.extend(pending.1);
            }
            None => merged.push(pending),
        }
    }
    let groups = merged
        .into_iter()
        .map(|(counts, mut rows)| {
            rows.sort_unstable();
            let s = f1_scores(&gold.select_rows(&rows), &pred.select_rows(&rows))?;
            let name = match counts.as_slice() {
                [c] => c.to_string(),
                [first, .., last] => format!("{first}-{last}"),
                [] => unreachable!("groups are never empty"),
            };
            Ok(PathGroup {
                name,
                path_counts: counts,
                num_samples: rows.len(),
                micro_f1: s.micro_f1,
                macro_f1: s.macro_f1,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(PathBreakdown {
        groups,
        not_ancestor_closed,
    })
}
