//! Hard negative mining, the text-label alignment contrastive loss, binary
//! cross-entropy, and their sum.

use std::rc::Rc;

use thiserror::Error;

use crate::labels::LabelMatrix;
use crate::numerics::{ContrastGroup, Tape, Tensor, Var};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("sample {0} has no positive label")]
    NoPositives(usize),
    #[error("shape mismatch: similarities {sim:?} vs labels {labels:?}")]
    Shape { sim: Vec<usize>, labels: Vec<usize> },
}

/// Per-sample positive and mined negative label ids (both sorted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSets {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl LabelSets {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// `S(i) = P(i) ∪ N(i)`, sorted.
    pub fn union(&self, i: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.positives[i].iter().chain(&self.negatives[i]).copied().collect();
        s.sort_unstable();
        s
    }
}

/// Cosine similarity between each text row and each label row, `[M, K]`.
pub fn similarity_matrix(tape: &mut Tape, texts: Var, labels: Var) -> Var {
    tape.cosine_matrix(texts, labels)
}

/// For each sample, the `|P(i)|` most similar non-positive labels (fewer when
/// not enough exist). Ties go to the lower label id. Pure selection: nothing
/// here is differentiated.
pub fn mine_hard_negatives(sim: &Tensor, gold: &LabelMatrix) -> Result<LabelSets, LossError> {
    if sim.shape() != [gold.num_rows(), gold.num_cols()] {
        return Err(LossError::Shape {
            sim: sim.shape().to_vec(),
            labels: vec![gold.num_rows(), gold.num_cols()],
        });
    }
    let mut positives = Vec::with_capacity(gold.num_rows());
    let mut negatives = Vec::with_capacity(gold.num_rows());
    for i in 0..gold.num_rows() {
        let pos = gold.positives(i);
        if pos.is_empty() {
            return Err(LossError::NoPositives(i));
        }
        let mut scores = sim.row(i).to_vec();
        for &p in &pos {
            scores[p] = f64::NEG_INFINITY;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let take = pos.len().min(scores.len() - pos.len());
        let mut neg: Vec<usize> = order.into_iter().filter(|c| !gold.get(i, *c)).take(take).collect();
        neg.sort_unstable();
        positives.push(pos);
        negatives.push(neg);
    }
    Ok(LabelSets { positives, negatives })
}

/// Text-label alignment loss over similarities `sim` (`[M, K]`) at temperature `tau`.
pub fn tla_loss(tape: &mut Tape, sim: Var, sets: &LabelSets, tau: f64) -> Var {
    let groups = (0..sets.len())
        .map(|i| ContrastGroup {
            row: i,
            positives: sets.positives[i].clone(),
            candidates: sets.union(i),
        })
        .collect();
    tape.contrastive(sim, Rc::new(groups), tau)
}

/// BCE over all labels per sample, averaged over samples; probabilities are
/// clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(tape: &mut Tape, gold: &LabelMatrix, probs: Var) -> Result<Var, LossError> {
    let shape = tape.shape(probs);
    if shape != [gold.num_rows(), gold.num_cols()] {
        return Err(LossError::Shape {
            sim: shape.to_vec(),
            labels: vec![gold.num_rows(), gold.num_cols()],
        });
    }
    Ok(tape.bce(probs, &gold.to_tensor()))
}

/// Unweighted sum; `tla = None` realizes the ablation without alignment.
pub fn total_loss(tape: &mut Tape, bce: Var, tla: Option<Var>) -> Var {
    match tla {
        Some(t) => tape.add(bce, t),
        None => bce,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_row(sim: &[f64], pos: &[usize]) -> LabelSets {
        let s = Tensor::from_rows(&[sim.to_vec()]);
        let y = LabelMatrix::from_sets(&[pos.to_vec()], sim.len());
        mine_hard_negatives(&s, &y).unwrap()
    }

    #[test]
    fn mining_examples() {
        assert_eq!(one_row(&[0.9, 0.8, 0.7, 0.1], &[0]).negatives, vec![vec![1]]);
        assert_eq!(one_row(&[0.9, 0.8, 0.7, 0.1], &[0, 2]).negatives, vec![vec![1, 3]]);
        let all = one_row(&[0.1, 0.2], &[0, 1]);
        assert!(all.negatives[0].is_empty());
        assert_eq!(all.union(0), vec![0, 1]);
        // not enough negatives: take what exists
        assert_eq!(one_row(&[0.1, 0.2, 0.3], &[0, 1]).negatives, vec![vec![2]]);
        // ties favour the lower id
        assert_eq!(one_row(&[0.0, 0.5, 0.5, 0.5], &[0]).negatives, vec![vec![1]]);
    }

    #[test]
    fn zero_positive_row_rejected() {
        let s = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]);
        let y = LabelMatrix::from_sets(&[vec![0], vec![]], 2);
        assert_eq!(mine_hard_negatives(&s, &y), Err(LossError::NoPositives(1)));
    }

    fn tla_of(sim: &[f64], pos: &[usize], neg: &[usize], tau: f64) -> f64 {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::from_rows(&[sim.to_vec()]));
        let sets = LabelSets {
            positives: vec![pos.to_vec()],
            negatives: vec![neg.to_vec()],
        };
        let l = tla_loss(&mut tape, s, &sets, tau);
        tape.value(l).item()
    }

    #[test]
    fn tla_closed_forms() {
        let v = tla_of(&[1.0, 0.0], &[0], &[1], 1.0);
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        for tau in [0.07, 0.5, 3.0] {
            let v = tla_of(&[0.3, 0.3], &[0], &[1], tau);
            assert!((v - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn tla_is_stable_at_low_temperature() {
        let v = tla_of(&[1.0, -1.0, 0.9], &[0], &[1, 2], 0.001);
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn bce_examples() {
        let y = LabelMatrix::from_sets(&[vec![0], vec![1]], 3);
        let mut tape = Tape::new();
        let half = tape.leaf(Tensor::full(&[2, 3], 0.5));
        let l = bce_loss(&mut tape, &y, half).unwrap();
        assert!((tape.value(l).item() - 3.0 * 2f64.ln()).abs() < 1e-12);
        let exact = tape.leaf(y.to_tensor());
        let l = bce_loss(&mut tape, &y, exact).unwrap();
        assert!(tape.value(l).item() < 1e-5 * 3.0);
        let wrong = tape.leaf(Tensor::zeros(&[3, 3]));
        assert!(bce_loss(&mut tape, &y, wrong).is_err());
    }

    #[test]
    fn total_is_sum() {
        let mut tape = Tape::new();
        let b = tape.leaf(Tensor::scalar(0.5));
        let t = tape.leaf(Tensor::scalar(0.3));
        let s = total_loss(&mut tape, b, Some(t));
        assert!((tape.value(s).item() - 0.8).abs() < 1e-15);
        assert_eq!(total_loss(&mut tape, b, None), b);
    }
}
