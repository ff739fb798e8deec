//! Confusion-loop F1 and hierarchical label-matrix fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use htla::hierarchy::LabelTaxonomy;
use htla::labels::LabelMatrix;

pub fn random_matrix(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> LabelMatrix {
    LabelMatrix::from_rows(&(0..rows).map(|_| (0..cols).map(|_| rng.random_bool(p)).collect()).collect::<Vec<_>>())
}

/// Micro and Macro F1 from a plain confusion loop.
pub fn f1_oracle(gold: &LabelMatrix, pred: &LabelMatrix) -> (f64, f64) {
    let f1 = |tp: f64, fp: f64, fn_: f64| if tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    let mut macro_sum = 0.0;
    for c in 0..gold.num_cols() {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for r in 0..gold.num_rows() {
            match (gold.get(r, c), pred.get(r, c)) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        macro_sum += f1(tp, fp, fn_);
    }
    (f1(tp_all, fp_all, fn_all), macro_sum / gold.num_cols() as f64)
}

pub fn wos_like() -> LabelTaxonomy {
    let mut text = String::from("Root");
    for d in 0..4 {
        text.push_str(&format!("\tD{d}"));
    }
    text.push('\n');
    for d in 0..4 {
        text.push_str(&format!("D{d}"));
        for c in 0..(d + 2) {
            text.push_str(&format!("\tD{d}C{c}"));
        }
        text.push('\n');
    }
    LabelTaxonomy::parse(&text).unwrap()
}

/// Ancestor-closed gold sets over one or two random leaves, and noisy
/// predictions.
pub fn hierarchical_instance(tax: &LabelTaxonomy, rows: usize, seed: u64) -> (LabelMatrix, LabelMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = tax.leaves();
    let k = tax.num_labels();
    let sets: Vec<Vec<usize>> = (0..rows)
        .map(|_| {
            let n = rng.random_range(1..=3);
            let mut set = Vec::new();
            for _ in 0..n {
                let leaf = leaves[rng.random_range(0..leaves.len())];
                set.push(leaf);
                set.extend(tax.ancestors(leaf));
            }
            set.sort_unstable();
            set.dedup();
            set
        })
        .collect();
    let gold = LabelMatrix::from_sets(&sets, k);
    let mut pred = gold.clone();
    for r in 0..rows {
        for c in 0..k {
            if rng.random_bool(0.15) {
                pred.set(r, c, !pred.get(r, c));
            }
        }
    }
    (gold, pred)
}
