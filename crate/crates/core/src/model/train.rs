use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HtlaModel, ModelError};
use crate::data::Sample;
use crate::eval::f1_scores;
use crate::labels::LabelMatrix;
use crate::numerics::{AdamConfig, Mode, ParamStore, Tape, Tensor};
use crate::text::{TokenSequence, Vocabulary};

/// Sequences per chunk when scoring a split.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub tla_enabled: bool,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            tau: 0.07,
            patience: 6,
            max_epochs: 50,
            seed: 0,
            tla_enabled: true,
        }
    }

    pub fn paper() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 10,
            ..Self::desk()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eps <= 0.0 {
            return fail("eps must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be positive");
        }
        if self.patience == 0 {
            return fail("patience must be positive");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive");
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Tokenized sequences with their gold label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSplit {
    pub sequences: Vec<TokenSequence>,
    pub gold: LabelMatrix,
}

impl EncodedSplit {
    pub fn new(samples: &[Sample], vocab: &Vocabulary, max_len: usize, num_labels: usize) -> Self {
        let sequences = samples.iter().map(|s| vocab.tokenize(&s.text, max_len)).collect();
        let sets: Vec<&[usize]> = samples.iter().map(|s| s.labels.as_slice()).collect();
        Self {
            sequences,
            gold: LabelMatrix::from_sets(&sets, num_labels),
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> EncodedSplit {
        EncodedSplit {
            sequences: rows.iter().map(|&r| self.sequences[r].clone()).collect(),
            gold: self.gold.select_rows(rows),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss_bce: f64,
    /// Zero when alignment is disabled.
    pub loss_tla: f64,
    pub loss_total: f64,
}

/// One optimization step: forward, losses, backward, Adam on every
/// parameter, then gradients are zeroed. `position` (epoch, batch) only
/// labels the error on a non-finite loss.
pub fn train_step(
    model: &HtlaModel,
    store: &mut ParamStore,
    batch: &EncodedSplit,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    position: (usize, usize),
) -> Result<StepMetrics, ModelError> {
    let mut tape = Tape::new();
    let tau = cfg.tla_enabled.then_some(cfg.tau);
    let (_, loss) = model.loss(&mut tape, store, &batch.sequences, &batch.gold, tau, &mut Mode::Train(rng))?;
    let loss_bce = tape.value(loss.bce).item();
    let loss_tla = loss.tla.map_or(0.0, |t| tape.value(t).item());
    let loss_total = tape.value(loss.total).item();
    if !loss_total.is_finite() {
        return Err(ModelError::NonFiniteLoss {
            epoch: position.0,
            batch: position.1,
            bce: loss_bce,
            tla: loss_tla,
        });
    }
    store.zero_grads();
    tape.backward_into(loss.total, store);
    let stepped = store.adam_step_all(&cfg.adam());
    store.zero_grads();
    stepped?;
    Ok(StepMetrics {
        loss_bce,
        loss_tla,
        loss_total,
    })
}

/// Patience counter over a score that should increase. Only strict
/// improvements reset the counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records an epoch's score; returns true if it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_bce: f64,
    pub loss_tla: f64,
    pub loss_total: f64,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_micro_f1: f64,
    pub best_val_macro_f1: f64,
    /// True when patience ran out before `max_epochs`.
    pub stopped_early: bool,
    /// Wall-clock seconds per epoch.
    pub epoch_seconds: Vec<f64>,
}

/// Trains until validation Macro-F1 stops improving for `patience` epochs or
/// `max_epochs` is reached. On return `store` holds the best-epoch values.
///
/// Epoch `e` (1-based) shuffles with seed `cfg.seed + e`; dropout draws from
/// a separate stream of `cfg.seed`.
pub fn fit(
    model: &HtlaModel,
    store: &mut ParamStore,
    train: &EncodedSplit,
    val: &EncodedSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, f64),
) -> Result<FitOutcome, ModelError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptySplit("validation"));
    }
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_values = snapshot(store);
    let mut best_micro = 0.0;
    let mut history = Vec::new();
    let mut epoch_seconds = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let m = train_step(model, store, &train.subset(rows), cfg, &mut dropout_rng, (epoch, b))?;
            sums.0 += m.loss_bce;
            sums.1 += m.loss_tla;
            sums.2 += m.loss_total;
            batches += 1;
        }
        let pred = model.predict(store, &val.sequences, EVAL_CHUNK)?;
        let scores = f1_scores(&val.gold, &pred.predicted)?;
        let n = batches as f64;
        let record = EpochRecord {
            epoch,
            loss_bce: sums.0 / n,
            loss_tla: sums.1 / n,
            loss_total: sums.2 / n,
            val_micro_f1: scores.micro_f1,
            val_macro_f1: scores.macro_f1,
        };
        if stopper.observe(epoch, scores.macro_f1) {
            best_values = snapshot(store);
            best_micro = scores.micro_f1;
        }
        let seconds = started.elapsed().as_secs_f64();
        on_epoch(&record, seconds);
        history.push(record);
        epoch_seconds.push(seconds);
        if stopper.should_stop() {
            break;
        }
    }

    restore(store, best_values);
    let stopped_early = stopper.should_stop();
    Ok(FitOutcome {
        best_epoch: stopper.best_epoch(),
        best_val_micro_f1: best_micro,
        best_val_macro_f1: stopper.best().unwrap_or(0.0),
        stopped_early,
        history,
        epoch_seconds,
    })
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|p| p.value.clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Tensor>) {
    let ids: Vec<_> = store.ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::LabelTaxonomy;
    use crate::model::ModelConfig;

    #[test]
    fn patience_counts_only_strict_gains() {
        let mut s = EarlyStopping::new(2);
        assert!(s.observe(1, 0.5));
        assert!(!s.observe(2, 0.5));
        assert!(s.observe(3, 0.6));
        assert!(!s.observe(4, 0.1));
        assert!(!s.should_stop());
        assert!(!s.observe(5, 0.6));
        assert!(s.should_stop());
        assert_eq!((s.best(), s.best_epoch()), (Some(0.6), 3));
    }

    #[test]
    fn worsening_scores_stop_after_patience_plus_one() {
        let mut s = EarlyStopping::new(6);
        let mut epochs = 0;
        for e in 1..=50 {
            epochs = e;
            s.observe(e, 1.0 - e as f64 * 0.01);
            if s.should_stop() {
                break;
            }
        }
        assert_eq!(epochs, 7);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::desk().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::desk()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_validation_is_an_error() {
        let tax = LabelTaxonomy::parse("Root\ta\tb").unwrap();
        let vocab = Vocabulary::build(["a b"], 1, 10).unwrap();
        let cfg = ModelConfig {
            d_h: 8,
            n_text_layers: 1,
            n_text_heads: 2,
            max_len: 6,
            n_graph_heads: 2,
            d_p: 2,
            ..ModelConfig::desk()
        };
        let (model, mut store) = HtlaModel::new(cfg, &tax, &vocab, 0).unwrap();
        let train = EncodedSplit::new(&[Sample { text: "a".into(), labels: vec![0] }], &vocab, 6, 2);
        let val = EncodedSplit::new(&[], &vocab, 6, 2);
        let err = fit(&model, &mut store, &train, &val, &TrainConfig::desk(), |_, _| {});
        assert_eq!(err.unwrap_err(), ModelError::EmptySplit("validation"));
    }
}
