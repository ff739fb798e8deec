//! The assembled classifier: text encoder, label encoder, and a classifier
//! shared across labels over `h_text + f_i`. Training lives in [`train`].

mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use train::{
    fit, train_step, EarlyStopping, EncodedSplit, EpochRecord, FitOutcome, StepMetrics, TrainConfig,
};

use crate::eval::EvalError;
use crate::graph::{GraphEncoder, GraphEncoderConfig, GraphError};
use crate::hierarchy::LabelTaxonomy;
use crate::labels::LabelMatrix;
use crate::losses::{self, LabelSets, LossError};
use crate::numerics::{init, Mode, NumericsError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::{trim_padding, TextEncoder, TextEncoderConfig, TextError, TokenSequence, Vocabulary};

/// Decision threshold on sigmoid probabilities (inclusive).
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: bce={bce}, tla={tla}")]
    NonFiniteLoss { epoch: usize, batch: usize, bce: f64, tla: f64 },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_h: usize,
    pub n_text_layers: usize,
    pub n_text_heads: usize,
    pub max_len: usize,
    pub n_graph_heads: usize,
    pub d_p: usize,
    pub text_dropout: f64,
    pub graph_dropout: f64,
    pub use_name_embedding: bool,
    pub use_node_embedding: bool,
    pub use_label_enhancer: bool,
}

impl ModelConfig {
    /// Small from-scratch encoder for CPU experiments.
    pub fn desk() -> Self {
        Self {
            d_h: 64,
            n_text_layers: 2,
            n_text_heads: 4,
            max_len: 64,
            n_graph_heads: 4,
            d_p: 30,
            text_dropout: 0.1,
            graph_dropout: 0.1,
            use_name_embedding: true,
            use_node_embedding: true,
            use_label_enhancer: true,
        }
    }

    /// BERT-base sized encoder.
    pub fn paper() -> Self {
        Self {
            d_h: 768,
            n_text_layers: 12,
            n_text_heads: 12,
            max_len: 512,
            n_graph_heads: 12,
            ..Self::desk()
        }
    }

    pub fn text_config(&self, vocab_size: usize) -> TextEncoderConfig {
        TextEncoderConfig {
            vocab_size,
            d_h: self.d_h,
            n_layers: self.n_text_layers,
            n_heads: self.n_text_heads,
            max_len: self.max_len,
            dropout: self.text_dropout,
        }
    }

    pub fn graph_config(&self) -> GraphEncoderConfig {
        GraphEncoderConfig {
            d_h: self.d_h,
            d_p: self.d_p,
            n_heads: self.n_graph_heads,
            dropout: self.graph_dropout,
            use_name_embedding: self.use_name_embedding,
            use_node_embedding: self.use_node_embedding,
            use_label_enhancer: self.use_label_enhancer,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[M, d_h]`
    pub h_text: Var,
    /// `[K, d_h]`
    pub labels: Var,
    /// `[M, K]`
    pub logits: Var,
    /// `[M, K]`
    pub probs: Var,
}

/// Loss nodes for one batch.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub total: Var,
    pub bce: Var,
    pub tla: Option<Var>,
    pub sets: Option<LabelSets>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    pub predicted: LabelMatrix,
    pub h_text: Tensor,
    pub labels: Tensor,
}

#[derive(Debug, Clone)]
pub struct HtlaModel {
    cfg: ModelConfig,
    num_labels: usize,
    text: TextEncoder,
    graph: GraphEncoder,
    pub classifier_weight: ParamId,
    pub classifier_bias: ParamId,
}

impl HtlaModel {
    /// Registers every parameter in a fresh store, initialized from `seed`.
    pub fn new(
        cfg: ModelConfig,
        tax: &LabelTaxonomy,
        vocab: &Vocabulary,
        seed: u64,
    ) -> Result<(Self, ParamStore), ModelError> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = TextEncoder::new(cfg.text_config(vocab.len()), &mut store, &mut rng)?;
        let graph = GraphEncoder::new(
            cfg.graph_config(),
            tax,
            vocab,
            text.token_embeddings(),
            &mut store,
            &mut rng,
        )?;
        let k = tax.num_labels();
        let classifier_weight = store.add("classifier.weight", init::scaled_normal(&[cfg.d_h, k], &mut rng));
        let classifier_bias = store.add("classifier.bias", Tensor::zeros(&[k]));
        let model = Self {
            cfg,
            num_labels: k,
            text,
            graph,
            classifier_weight,
            classifier_bias,
        };
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn graph_encoder(&self) -> &GraphEncoder {
        &self.graph
    }

    /// `l_i = (W_cᵀ h + b)_i + (W_cᵀ f_i)_i` for every sample and label,
    /// i.e. the `i`-th classifier output on the composite `h + f_i`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h_text: Var, labels: Var) -> Var {
        let w = tape.param(store, self.classifier_weight);
        let b = tape.param(store, self.classifier_bias);
        let text_part = tape.matmul(h_text, w);
        let text_part = tape.add_bias(text_part, b);
        let label_part = tape.diag_matmul(labels, w);
        tape.add_bias(text_part, label_part)
    }

    /// Forward pass over one batch. Trailing all-padding columns are trimmed
    /// first; this does not change the result.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[TokenSequence],
        mode: &mut Mode<'_>,
    ) -> Result<ForwardVars, ModelError> {
        let batch = trim_padding(batch);
        let h_text = self.text.encode_batch(tape, store, &batch, mode)?.pooled;
        let labels = self.graph.encode_labels(tape, store, mode);
        let logits = self.logits(tape, store, h_text, labels);
        let probs = tape.sigmoid(logits);
        Ok(ForwardVars {
            h_text,
            labels,
            logits,
            probs,
        })
    }

    /// Forward pass plus BCE and, when `tla_tau` is set, the alignment loss
    /// over hard-mined negatives.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[TokenSequence],
        gold: &LabelMatrix,
        tla_tau: Option<f64>,
        mode: &mut Mode<'_>,
    ) -> Result<(ForwardVars, LossVars), ModelError> {
        let fwd = self.forward(tape, store, batch, mode)?;
        let bce = losses::bce_loss(tape, gold, fwd.probs)?;
        let (tla, sets) = match tla_tau {
            Some(tau) => {
                let sim = losses::similarity_matrix(tape, fwd.h_text, fwd.labels);
                let sets = losses::mine_hard_negatives(tape.value(sim), gold)?;
                (Some(losses::tla_loss(tape, sim, &sets, tau)), Some(sets))
            }
            None => (None, None),
        };
        let total = losses::total_loss(tape, bce, tla);
        Ok((fwd, LossVars { total, bce, tla, sets }))
    }

    /// Eval-mode predictions in chunks of `chunk` sequences.
    pub fn predict(
        &self,
        store: &ParamStore,
        sequences: &[TokenSequence],
        chunk: usize,
    ) -> Result<PredictionOutput, ModelError> {
        let k = self.num_labels;
        let mut tape = Tape::new();
        let labels_var = self.graph.encode_labels(&mut tape, store, &mut Mode::Eval);
        let labels = tape.value(labels_var).clone();
        let (mut logits, mut probs, mut h_rows) = (Vec::new(), Vec::new(), Vec::new());
        for part in sequences.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let batch = trim_padding(part);
            let h = self.text.encode_batch(&mut tape, store, &batch, &mut Mode::Eval)?.pooled;
            let l = tape.leaf(labels.clone());
            let lg = self.logits(&mut tape, store, h, l);
            let p = tape.sigmoid(lg);
            logits.extend_from_slice(tape.value(lg).data());
            probs.extend_from_slice(tape.value(p).data());
            h_rows.extend_from_slice(tape.value(h).data());
        }
        let m = sequences.len();
        let logits = Tensor::new(vec![m, k], logits)?;
        let probs = Tensor::new(vec![m, k], probs)?;
        let predicted = if m == 0 {
            LabelMatrix::zeros(0, k)
        } else {
            LabelMatrix::from_probabilities(&probs, THRESHOLD)
        };
        Ok(PredictionOutput {
            logits,
            probs,
            predicted,
            h_text: Tensor::new(vec![m, self.cfg.d_h], h_rows)?,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (LabelTaxonomy, Vocabulary, ModelConfig) {
        let tax = LabelTaxonomy::parse("Root\talpha\tbeta\nalpha\tgamma\tdelta").unwrap();
        let vocab = Vocabulary::build(["alpha beta gamma delta words"], 1, 100).unwrap();
        let cfg = ModelConfig {
            d_h: 8,
            n_text_layers: 1,
            n_text_heads: 2,
            max_len: 8,
            n_graph_heads: 2,
            d_p: 3,
            ..ModelConfig::desk()
        };
        (tax, vocab, cfg)
    }

    #[test]
    fn zero_classifier_gives_half() {
        let (tax, vocab, cfg) = tiny();
        let (model, mut store) = HtlaModel::new(cfg, &tax, &vocab, 0).unwrap();
        store.value_mut(model.classifier_weight).fill(0.0);
        let seqs = vec![vocab.tokenize("alpha gamma", 8), vocab.tokenize("beta", 8)];
        let out = model.predict(&store, &seqs, 10).unwrap();
        assert!(out.probs.data().iter().all(|&p| p == 0.5));
        assert!(out.predicted.row(0).iter().all(|&b| b));
        assert_eq!(out.logits.shape(), &[2, 4]);
        assert_eq!(out.h_text.shape(), &[2, 8]);
    }

    #[test]
    fn logits_match_per_label_composites() {
        let (tax, vocab, cfg) = tiny();
        let (model, store) = HtlaModel::new(cfg, &tax, &vocab, 5).unwrap();
        let seqs = vec![vocab.tokenize("alpha gamma words", 8), vocab.tokenize("delta", 8)];
        let out = model.predict(&store, &seqs, 10).unwrap();
        let w = store.value(model.classifier_weight);
        let b = store.value(model.classifier_bias);
        for m in 0..2 {
            for i in 0..4 {
                let c: Vec<f64> = (0..8).map(|h| out.h_text.at(&[m, h]) + out.labels.at(&[i, h])).collect();
                let literal = (0..8).map(|h| w.at(&[h, i]) * c[h]).sum::<f64>() + b.data()[i];
                assert!((literal - out.logits.at(&[m, i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chunking_is_consistent() {
        let (tax, vocab, cfg) = tiny();
        let (model, store) = HtlaModel::new(cfg, &tax, &vocab, 2).unwrap();
        let seqs: Vec<_> = ["alpha", "beta gamma", "delta delta words", "gamma"]
            .iter()
            .map(|t| vocab.tokenize(t, 8))
            .collect();
        let whole = model.predict(&store, &seqs, 4).unwrap();
        let split = model.predict(&store, &seqs, 1).unwrap();
        assert!(whole.logits.max_abs_diff(&split.logits) < 1e-10);
    }
}
