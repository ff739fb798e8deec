use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::TokenSequence;
use super::TextError;
use crate::numerics::{init, KeyMask, Mode, ParamId, ParamStore, RowMix, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub d_h: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<(), TextError> {
        if self.d_h == 0 || self.n_heads == 0 || self.d_h % self.n_heads != 0 {
            return Err(TextError::Config(format!(
                "d_h={} must be a positive multiple of n_text_heads={}",
                self.d_h, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(TextError::Config("max_len must be at least 2".into()));
        }
        if self.vocab_size < 4 {
            return Err(TextError::Config("vocabulary must include the specials".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TextError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    w_q: ParamId,
    b_q: ParamId,
    w_k: ParamId,
    b_k: ParamId,
    w_v: ParamId,
    b_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// Post-norm transformer encoder with learned positions and `[CLS]` pooling.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    cfg: TextEncoderConfig,
    token_embeddings: ParamId,
    position_embeddings: ParamId,
    layers: Vec<LayerParams>,
}

/// Token states `[M·n, d_h]` and the pooled `[CLS]` rows `[M, d_h]`.
#[derive(Debug, Clone, Copy)]
pub struct EncodedText {
    pub hidden: Var,
    pub pooled: Var,
}

impl TextEncoder {
    pub fn new(cfg: TextEncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, TextError> {
        cfg.validate()?;
        let d = cfg.d_h;
        let token_embeddings = store.add("text.token_embeddings", init::uniform(&[cfg.vocab_size, d], 0.02, rng));
        let position_embeddings = store.add("text.position_embeddings", init::uniform(&[cfg.max_len, d], 0.02, rng));
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let mut proj = |name: &str, rows: usize, cols: usize| {
                let w = store.add(format!("text.layers.{l}.{name}.weight"), init::scaled_normal(&[rows, cols], rng));
                let b = store.add(format!("text.layers.{l}.{name}.bias"), Tensor::zeros(&[cols]));
                (w, b)
            };
            let (w_q, b_q) = proj("attn.q", d, d);
            let (w_k, b_k) = proj("attn.k", d, d);
            let (w_v, b_v) = proj("attn.v", d, d);
            let (w_o, b_o) = proj("attn.out", d, d);
            let (ff1_w, ff1_b) = proj("ff.linear1", d, 4 * d);
            let (ff2_w, ff2_b) = proj("ff.linear2", 4 * d, d);
            let ln1_gain = store.add(format!("text.layers.{l}.ln1.gain"), Tensor::full(&[d], 1.0));
            let ln1_bias = store.add(format!("text.layers.{l}.ln1.bias"), Tensor::zeros(&[d]));
            let ln2_gain = store.add(format!("text.layers.{l}.ln2.gain"), Tensor::full(&[d], 1.0));
            let ln2_bias = store.add(format!("text.layers.{l}.ln2.bias"), Tensor::zeros(&[d]));
            layers.push(LayerParams {
                w_q,
                b_q,
                w_k,
                b_k,
                w_v,
                b_v,
                w_o,
                b_o,
                ln1_gain,
                ln1_bias,
                ff1_w,
                ff1_b,
                ff2_w,
                ff2_b,
                ln2_gain,
                ln2_bias,
            });
        }
        Ok(Self {
            cfg,
            token_embeddings,
            position_embeddings,
            layers,
        })
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.cfg
    }

    /// The token table, shared with the label-name embedding.
    pub fn token_embeddings(&self) -> ParamId {
        self.token_embeddings
    }

    /// Encodes a batch of equally padded sequences.
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[TokenSequence],
        mode: &mut Mode<'_>,
    ) -> Result<EncodedText, TextError> {
        let m = batch.len();
        if m == 0 {
            return Err(TextError::EmptyBatch);
        }
        let n = batch[0].len();
        if let Some(bad) = batch.iter().find(|s| s.len() != n || s.attention_mask.len() != n) {
            return Err(TextError::RaggedBatch {
                expected: n,
                found: bad.len(),
            });
        }
        if n > self.cfg.max_len {
            return Err(TextError::SequenceTooLong {
                len: n,
                max_len: self.cfg.max_len,
            });
        }
        let (d, heads) = (self.cfg.d_h, self.cfg.n_heads);
        let dh = d / heads;
        let rate = self.cfg.dropout;

        let ids: Vec<usize> = batch.iter().flat_map(|s| s.ids.iter().copied()).collect();
        let positions: Vec<usize> = (0..m).flat_map(|_| 0..n).collect();
        let tok_table = tape.param(store, self.token_embeddings);
        let pos_table = tape.param(store, self.position_embeddings);
        let tok = tape.row_mix(tok_table, Rc::new(RowMix::select(&ids)));
        let pos = tape.row_mix(pos_table, Rc::new(RowMix::select(&positions)));
        let mut x = tape.add(tok, pos);
        x = tape.dropout(x, rate, mode);

        let mask = Rc::new(KeyMask {
            keys: batch
                .iter()
                .flat_map(|s| s.attention_mask.iter().map(|&b| b == 1))
                .collect(),
            rows_per_group: heads * n,
        });
        let split = |tape: &mut Tape, v: Var| {
            let v = tape.reshape(v, &[m, n, heads, dh]);
            let v = tape.permute(v, &[0, 2, 1, 3]);
            tape.reshape(v, &[m * heads, n, dh])
        };

        for lp in &self.layers {
            let q = linear(tape, store, x, lp.w_q, lp.b_q);
            let k = linear(tape, store, x, lp.w_k, lp.b_k);
            let v = linear(tape, store, x, lp.w_v, lp.b_v);
            let (q, k, v) = (split(tape, q), split(tape, k), split(tape, v));
            let scores = tape.batch_matmul(q, k, true);
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let probs = tape.softmax(scores, Some(mask.clone()));
            let probs = tape.dropout(probs, rate, mode);
            let ctx = tape.batch_matmul(probs, v, false);
            let ctx = tape.reshape(ctx, &[m, heads, n, dh]);
            let ctx = tape.permute(ctx, &[0, 2, 1, 3]);
            let ctx = tape.reshape(ctx, &[m * n, d]);
            let attn = linear(tape, store, ctx, lp.w_o, lp.b_o);
            let attn = tape.dropout(attn, rate, mode);
            let res = tape.add(x, attn);
            x = layer_norm(tape, store, res, lp.ln1_gain, lp.ln1_bias);

            let h = linear(tape, store, x, lp.ff1_w, lp.ff1_b);
            let h = tape.gelu(h);
            let h = linear(tape, store, h, lp.ff2_w, lp.ff2_b);
            let h = tape.dropout(h, rate, mode);
            let res = tape.add(x, h);
            x = layer_norm(tape, store, res, lp.ln2_gain, lp.ln2_bias);
        }

        let cls_rows: Vec<usize> = (0..m).map(|i| i * n).collect();
        let pooled = tape.row_mix(x, Rc::new(RowMix::select(&cls_rows)));
        Ok(EncodedText { hidden: x, pooled })
    }
}

pub(crate) fn linear(tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Var {
    let w = tape.param(store, w);
    let b = tape.param(store, b);
    let y = tape.matmul(x, w);
    tape.add_bias(y, b)
}

pub(crate) fn layer_norm(tape: &mut Tape, store: &ParamStore, x: Var, gain: ParamId, bias: ParamId) -> Var {
    let g = tape.param(store, gain);
    let b = tape.param(store, bias);
    tape.layer_norm(x, g, b)
}

/// Drops trailing columns that are padding in every sequence of the batch.
pub fn trim_padding(batch: &[TokenSequence]) -> Vec<TokenSequence> {
    let longest = batch.iter().map(TokenSequence::active_len).max().unwrap_or(0);
    batch.iter().map(|s| s.with_len(longest.max(2))).collect()
}
