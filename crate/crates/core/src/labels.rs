//! Dense binary sample × label matrices (gold labels and predictions).

use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    /// One row per label-id set. Panics on ids outside `0..cols`.
    pub fn from_sets<S: AsRef<[usize]>>(sets: &[S], cols: usize) -> Self {
        let mut m = Self::zeros(sets.len(), cols);
        for (r, set) in sets.iter().enumerate() {
            for &c in set.as_ref() {
                m.set(r, c, true);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged label rows");
        Self {
            rows: rows.len(),
            cols,
            bits: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(r < self.rows && c < self.cols, "label matrix index ({r}, {c})");
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        assert!(r < self.rows && c < self.cols, "label matrix index ({r}, {c})");
        self.bits[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    /// Sorted ids of the set bits in row `r`.
    pub fn positives(&self, r: usize) -> Vec<usize> {
        self.row(r)
            .iter()
            .enumerate()
            .filter_map(|(c, &b)| b.then_some(c))
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = Self::zeros(rows.len(), self.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.bits[i * self.cols..(i + 1) * self.cols].copy_from_slice(self.row(r));
        }
        out
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            for (j, &c) in cols.iter().enumerate() {
                out.set(r, j, self.get(r, c));
            }
        }
        out
    }

    /// 0/1 values as a `[rows, cols]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.rows, self.cols],
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("consistent shape")
    }

    /// Thresholds probabilities: `p >= threshold` is positive.
    pub fn from_probabilities(probs: &Tensor, threshold: f64) -> Self {
        assert_eq!(probs.ndim(), 2, "probabilities must be 2-D");
        Self {
            rows: probs.shape()[0],
            cols: probs.shape()[1],
            bits: probs.data().iter().map(|&p| p >= threshold).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sets_and_slices() {
        let m = LabelMatrix::from_sets(&[vec![0, 2], vec![1]], 3);
        assert_eq!(m.positives(0), vec![0, 2]);
        assert_eq!(m.select_cols(&[2, 1]).row(1), &[false, true]);
        assert_eq!(m.select_rows(&[1]).positives(0), vec![1]);
        assert_eq!(m.to_tensor().data(), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let p = Tensor::from_rows(&[vec![0.5, 0.4999, 0.9]]);
        assert_eq!(LabelMatrix::from_probabilities(&p, 0.5).row(0), &[true, false, true]);
    }
}
