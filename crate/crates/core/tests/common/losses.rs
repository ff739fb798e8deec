//! Brute-force mining and alignment-loss oracles.

use htla::losses::LabelSets;

pub fn subsets(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    if items.len() < size {
        return Vec::new();
    }
    let mut out: Vec<Vec<usize>> = subsets(&items[1..], size - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, items[0]);
            s
        })
        .collect();
    out.extend(subsets(&items[1..], size));
    out
}

/// Best-sum subset of `min(|P|, K − |P|)` non-positives, lexicographically
/// smallest among equal sums. Among subsets of one size the best sum is the
/// one whose descending values are lexicographically greatest, so subsets are
/// compared exactly on those vectors instead of on rounded sums.
pub fn exhaustive_negatives(row: &[f64], pos: &[usize]) -> Vec<usize> {
    let others: Vec<usize> = (0..row.len()).filter(|c| !pos.contains(c)).collect();
    let size = pos.len().min(others.len());
    let key = |s: &[usize]| {
        let mut values: Vec<f64> = s.iter().map(|&c| row[c]).collect();
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        values
    };
    let mut best: Option<(Vec<f64>, Vec<usize>)> = None;
    for s in subsets(&others, size) {
        let score = key(&s);
        let better = match &best {
            None => true,
            Some((b, bs)) => match score.iter().zip(b).map(|(x, y)| x.partial_cmp(y).expect("finite")).find(|o| o.is_ne()) {
                Some(o) => o.is_gt(),
                None => s < *bs,
            },
        };
        if better {
            best = Some((score, s));
        }
    }
    best.unwrap().1
}

/// Mean over samples of the mean over positives of `−log softmax`, written
/// with plain exponentials.
pub fn tla_oracle(sim: &[Vec<f64>], sets: &LabelSets, tau: f64) -> f64 {
    let mut total = 0.0;
    for (i, row) in sim.iter().enumerate() {
        let pos = &sets.positives[i];
        let denom: f64 = pos.iter().chain(&sets.negatives[i]).map(|&j| (row[j] / tau).exp()).sum();
        let mut per = 0.0;
        for &p in pos {
            per += -((row[p] / tau).exp() / denom).ln();
        }
        total += per / pos.len() as f64;
    }
    total / sim.len() as f64
}
