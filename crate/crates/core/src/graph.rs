//! Graph-transformer label encoder over the taxonomy tree.
//!
//! Node features add a learned per-node embedding to the mean token embedding
//! of the label's name (sharing the text encoder's token table). Edge
//! features add a distance-indexed spatial embedding to the average of
//! learned edge weights along the unique tree path. One graph propagation
//! attention block then exchanges information node→node, node→edge and
//! edge→node, and a residual feed-forward refinement produces one feature
//! row per label. The virtual root takes part in attention but has no row in
//! the output.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::LabelTaxonomy;
use crate::numerics::{init, Mode, ParamId, ParamStore, RowMix, Tape, Tensor, Var};
use crate::text::{layer_norm, linear, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph encoder configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphEncoderConfig {
    pub d_h: usize,
    pub d_p: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub use_name_embedding: bool,
    pub use_node_embedding: bool,
    pub use_label_enhancer: bool,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            d_p: 30,
            n_heads: 4,
            dropout: 0.1,
            use_name_embedding: true,
            use_node_embedding: true,
            use_label_enhancer: true,
        }
    }
}

impl GraphEncoderConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.d_h == 0 || self.n_heads == 0 || self.d_h % self.n_heads != 0 {
            return Err(GraphError::Config(format!(
                "d_h={} must be a positive multiple of n_graph_heads={}",
                self.d_h, self.n_heads
            )));
        }
        if self.d_p == 0 {
            return Err(GraphError::Config("d_p must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GraphError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Taxonomy-derived index structures, fixed for the life of a model.
#[derive(Debug, Clone)]
pub struct GraphStructure {
    num_labels: usize,
    num_nodes: usize,
    max_dist: usize,
    /// Rows of the token table averaged per node (root: none).
    name_mix: Rc<RowMix>,
    /// Spatial-table row per node pair `i·N + j`.
    spatial_mix: Rc<RowMix>,
    /// Edge-weight rows averaged along the path for each node pair.
    edge_mix: Rc<RowMix>,
}

impl GraphStructure {
    pub fn new(tax: &LabelTaxonomy, vocab: &Vocabulary) -> Self {
        let n = tax.num_nodes();
        let dist = tax.compute_distances();
        let name_mix = RowMix::from_rows((0..n).map(|node| {
            let ids = if node == tax.root() {
                Vec::new()
            } else {
                vocab.encode_words(tax.name(node))
            };
            let w = 1.0 / ids.len().max(1) as f64;
            ids.into_iter().map(move |id| (id, w)).collect::<Vec<_>>()
        }));
        let pairs = || (0..n).flat_map(move |i| (0..n).map(move |j| (i, j)));
        let spatial_mix = RowMix::from_rows(pairs().map(|(i, j)| [(dist.get(i, j), 1.0)]));
        let edge_mix = RowMix::from_rows(pairs().map(|(i, j)| {
            // Sorted so that the (i, j) and (j, i) sums are bit-identical.
            let mut path = tax.path_edges(i, j);
            path.sort_unstable();
            let w = 1.0 / path.len().max(1) as f64;
            path.into_iter().map(move |e| (e, w)).collect::<Vec<_>>()
        }));
        Self {
            num_labels: tax.num_labels(),
            num_nodes: n,
            max_dist: dist.max_dist(),
            name_mix: Rc::new(name_mix),
            spatial_mix: Rc::new(spatial_mix),
            edge_mix: Rc::new(edge_mix),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }
}

/// Parameter handles of the propagation attention block.
#[derive(Debug, Clone, Copy)]
pub struct GpaParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// Edge → per-head attention bias, `d_p × n_head`.
    pub w_1: ParamId,
    /// Attention → edge update, `n_head × d_p`.
    pub w_2: ParamId,
    /// Aggregated edge → node, `d_p × d_h`.
    pub w_3: ParamId,
    /// Output projection, `d_h × d_h`.
    pub w_4: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct EnhancerParams {
    pub linear1_w: ParamId,
    pub linear1_b: ParamId,
    pub linear2_w: ParamId,
    pub linear2_b: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GpaOutput {
    /// Updated node features `[N, d_h]`.
    pub nodes: Var,
    /// Updated edge features `[N·N, d_p]` (row `i·N + j`).
    pub edges: Var,
    /// Attention probabilities `[n_head, N, N]`.
    pub attention: Var,
}

#[derive(Debug, Clone)]
pub struct GraphEncoder {
    cfg: GraphEncoderConfig,
    structure: GraphStructure,
    token_embeddings: ParamId,
    pub node_table: ParamId,
    pub spatial_table: ParamId,
    pub edge_weights: ParamId,
    pub gpa: GpaParams,
    pub enhancer: EnhancerParams,
}

impl GraphEncoder {
    /// Registers graph parameters. `token_embeddings` is the text encoder's
    /// table, reused for label names.
    pub fn new(
        cfg: GraphEncoderConfig,
        tax: &LabelTaxonomy,
        vocab: &Vocabulary,
        token_embeddings: ParamId,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self, GraphError> {
        cfg.validate()?;
        let table = store.value(token_embeddings);
        if table.shape() != [vocab.len(), cfg.d_h] {
            return Err(GraphError::Config(format!(
                "token table shape {:?} does not match vocabulary {} x d_h {}",
                table.shape(),
                vocab.len(),
                cfg.d_h
            )));
        }
        let structure = GraphStructure::new(tax, vocab);
        let (d, dp, h) = (cfg.d_h, cfg.d_p, cfg.n_heads);
        let n = structure.num_nodes;
        let node_table = store.add("graph.node_table", init::uniform(&[n, d], 0.02, rng));
        let spatial_table = store.add(
            "graph.spatial_table",
            init::uniform(&[structure.max_dist + 1, dp], 0.02, rng),
        );
        let edge_weights = store.add("graph.edge_weights", init::uniform(&[tax.num_edges(), dp], 0.02, rng));
        let mut proj = |name: &str, shape: [usize; 2]| store.add(format!("graph.gpa.{name}"), init::scaled_normal(&shape, rng));
        let gpa = GpaParams {
            w_q: proj("W_Q", [d, d]),
            w_k: proj("W_K", [d, d]),
            w_v: proj("W_V", [d, d]),
            w_1: proj("W_1", [dp, h]),
            w_2: proj("W_2", [h, dp]),
            w_3: proj("W_3", [dp, d]),
            w_4: proj("W_4", [d, d]),
        };
        let enhancer = EnhancerParams {
            linear1_w: store.add("graph.enhancer.linear1.weight", init::scaled_normal(&[d, 4 * d], rng)),
            linear1_b: store.add("graph.enhancer.linear1.bias", Tensor::zeros(&[4 * d])),
            linear2_w: store.add("graph.enhancer.linear2.weight", init::scaled_normal(&[4 * d, d], rng)),
            linear2_b: store.add("graph.enhancer.linear2.bias", Tensor::zeros(&[d])),
            ln_gain: store.add("graph.enhancer.ln.gain", Tensor::full(&[d], 1.0)),
            ln_bias: store.add("graph.enhancer.ln.bias", Tensor::zeros(&[d])),
        };
        Ok(Self {
            cfg,
            structure,
            token_embeddings,
            node_table,
            spatial_table,
            edge_weights,
            gpa,
            enhancer,
        })
    }

    pub fn config(&self) -> &GraphEncoderConfig {
        &self.cfg
    }

    pub fn structure(&self) -> &GraphStructure {
        &self.structure
    }

    /// Mean token embedding of each node's name, `[N, d_h]`; zero rows for the
    /// virtual root and for names with no tokens.
    pub fn embed_names(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let table = tape.param(store, self.token_embeddings);
        tape.row_mix(table, self.structure.name_mix.clone())
    }

    /// `g_i = embed_node(i) + embed_name(i)`, subject to the ablation switches.
    pub fn init_node_features(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let names = self.cfg.use_name_embedding.then(|| self.embed_names(tape, store));
        let nodes = self.cfg.use_node_embedding.then(|| tape.param(store, self.node_table));
        match (nodes, names) {
            (Some(a), Some(b)) => tape.add(a, b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => tape.leaf(Tensor::zeros(&[self.structure.num_nodes, self.cfg.d_h])),
        }
    }

    /// `x_ij = S[f(i,j)] + mean of w_e along the i–j path`, as `[N·N, d_p]`.
    pub fn init_edge_features(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let spatial = tape.param(store, self.spatial_table);
        let edges = tape.param(store, self.edge_weights);
        let s = tape.row_mix(spatial, self.structure.spatial_mix.clone());
        let e = tape.row_mix(edges, self.structure.edge_mix.clone());
        tape.add(s, e)
    }

    /// One graph propagation attention block over node features `g` (`[N, d_h]`)
    /// and edge features `x` (`[N·N, d_p]`).
    pub fn gpa_forward(&self, tape: &mut Tape, store: &ParamStore, g: Var, x: Var) -> GpaOutput {
        let n = self.structure.num_nodes;
        let (d, dp, heads) = (self.cfg.d_h, self.cfg.d_p, self.cfg.n_heads);
        let dh = d / heads;
        assert_eq!(tape.shape(g), &[n, d], "node feature shape");
        assert_eq!(tape.shape(x), &[n * n, dp], "edge feature shape");
        let p = self.gpa;

        let split = |tape: &mut Tape, w: ParamId| {
            let w = tape.param(store, w);
            let v = tape.matmul(g, w);
            let v = tape.reshape(v, &[n, heads, dh]);
            tape.permute(v, &[1, 0, 2])
        };
        let q = split(tape, p.w_q);
        let k = split(tape, p.w_k);
        let v = split(tape, p.w_v);

        // node-to-node: A_h = Q_h K_hᵀ / sqrt(dim_h) + (x W_1)[:, :, h]
        let w1 = tape.param(store, p.w_1);
        let bias = tape.matmul(x, w1);
        let bias = tape.reshape(bias, &[n, n, heads]);
        let bias = tape.permute(bias, &[2, 0, 1]);
        let scores = tape.batch_matmul(q, k, true);
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let logits = tape.add(scores, bias);
        let attention = tape.softmax(logits, None);
        let ctx = tape.batch_matmul(attention, v, false);
        let ctx = tape.permute(ctx, &[1, 0, 2]);
        let g1 = tape.reshape(ctx, &[n, d]);

        // node-to-edge: x_out = (A + softmax(A)) W_2
        let mixed = tape.add(logits, attention);
        let mixed = tape.permute(mixed, &[1, 2, 0]);
        let mixed = tape.reshape(mixed, &[n * n, heads]);
        let w2 = tape.param(store, p.w_2);
        let edges = tape.matmul(mixed, w2);

        // edge-to-node: g'' = (Σ_j x_out ⊙ softmax_j(x_out)) W_3
        let e3 = tape.reshape(edges, &[n, n, dp]);
        let e3 = tape.permute(e3, &[0, 2, 1]);
        let weights = tape.softmax(e3, None);
        let weighted = tape.mul(e3, weights);
        let pooled = tape.sum_last(weighted);
        let w3 = tape.param(store, p.w_3);
        let g2 = tape.matmul(pooled, w3);

        let w4 = tape.param(store, p.w_4);
        let sum = tape.add(g1, g2);
        let nodes = tape.matmul(sum, w4);
        GpaOutput {
            nodes,
            edges,
            attention,
        }
    }

    /// Residual feed-forward refinement, then drops the virtual-root row.
    pub fn label_enhancer(&self, tape: &mut Tape, store: &ParamStore, g3: Var, mode: &mut Mode<'_>) -> Var {
        let e = self.enhancer;
        let rate = self.cfg.dropout;
        let h = linear(tape, store, g3, e.linear1_w, e.linear1_b);
        let h = tape.gelu(h);
        let h = tape.dropout(h, rate, mode);
        let h = linear(tape, store, h, e.linear2_w, e.linear2_b);
        let h = tape.dropout(h, rate, mode);
        let res = tape.add(g3, h);
        let out = layer_norm(tape, store, res, e.ln_gain, e.ln_bias);
        self.label_rows(tape, out)
    }

    fn label_rows(&self, tape: &mut Tape, nodes: Var) -> Var {
        let rows: Vec<usize> = (0..self.structure.num_labels).collect();
        tape.row_mix(nodes, Rc::new(RowMix::select(&rows)))
    }

    /// Full label encoding: `[K, d_h]` label features from live parameters.
    pub fn encode_labels(&self, tape: &mut Tape, store: &ParamStore, mode: &mut Mode<'_>) -> Var {
        let g = self.init_node_features(tape, store);
        let x = self.init_edge_features(tape, store);
        let out = self.gpa_forward(tape, store, g, x);
        if self.cfg.use_label_enhancer {
            self.label_enhancer(tape, store, out.nodes, mode)
        } else {
            self.label_rows(tape, out.nodes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(cfg: GraphEncoderConfig) -> (LabelTaxonomy, Vocabulary, GraphEncoder, ParamStore) {
        let tax = LabelTaxonomy::parse("Root\tscience\tarts\nscience\tphysics\tbio chem\narts\tzzz").unwrap();
        let vocab = Vocabulary::build(["science physics bio chem arts"], 1, 100).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tok = store.add("text.token_embeddings", init::uniform(&[vocab.len(), cfg.d_h], 0.5, &mut rng));
        let enc = GraphEncoder::new(cfg, &tax, &vocab, tok, &mut store, &mut rng).unwrap();
        (tax, vocab, enc, store)
    }

    fn small_cfg() -> GraphEncoderConfig {
        GraphEncoderConfig {
            d_h: 8,
            d_p: 3,
            n_heads: 2,
            ..GraphEncoderConfig::default()
        }
    }

    #[test]
    fn name_embedding_is_token_mean() {
        let (tax, vocab, enc, store) = fixture(small_cfg());
        let mut tape = Tape::new();
        let names = enc.embed_names(&mut tape, &store);
        let names = tape.value(names);
        let table = store.value(enc.token_embeddings);
        let sci = tax.id_of("science").unwrap();
        assert_eq!(names.row(sci), table.row(vocab.id("science")));
        let bc = tax.id_of("bio chem").unwrap();
        for c in 0..8 {
            let want = 0.5 * (table.row(vocab.id("bio"))[c] + table.row(vocab.id("chem"))[c]);
            assert!((names.row(bc)[c] - want).abs() < 1e-15);
        }
        // unknown word maps to [UNK]
        assert_eq!(names.row(tax.id_of("zzz").unwrap()), table.row(crate::text::UNK));
        assert!(names.row(tax.root()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_features_follow_paths() {
        let (tax, _, enc, store) = fixture(small_cfg());
        let mut tape = Tape::new();
        let x = enc.init_edge_features(&mut tape, &store);
        let x = tape.value(x).clone();
        let n = tax.num_nodes();
        let s = store.value(enc.spatial_table);
        let w = store.value(enc.edge_weights);
        let (phys, bc, sci) = (tax.id_of("physics").unwrap(), tax.id_of("bio chem").unwrap(), tax.id_of("science").unwrap());
        assert_eq!(x.row(phys * n + phys), s.row(0));
        for c in 0..3 {
            assert!((x.row(phys * n + sci)[c] - (s.row(1)[c] + w.row(phys)[c])).abs() < 1e-15);
            let sib = s.row(2)[c] + 0.5 * (w.row(phys)[c] + w.row(bc)[c]);
            assert!((x.row(phys * n + bc)[c] - sib).abs() < 1e-15);
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(x.row(i * n + j), x.row(j * n + i));
            }
        }
    }

    #[test]
    fn shapes_and_attention_normalization() {
        let (tax, _, enc, store) = fixture(small_cfg());
        let mut tape = Tape::new();
        let g = enc.init_node_features(&mut tape, &store);
        let x = enc.init_edge_features(&mut tape, &store);
        let out = enc.gpa_forward(&mut tape, &store, g, x);
        let n = tax.num_nodes();
        assert_eq!(tape.shape(out.nodes), &[n, 8]);
        assert_eq!(tape.shape(out.edges), &[n * n, 3]);
        let att = tape.value(out.attention);
        for r in 0..att.rows() {
            assert!((att.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let labels = enc.encode_labels(&mut tape, &store, &mut Mode::Eval);
        assert_eq!(tape.shape(labels), &[tax.num_labels(), 8]);
    }

    #[test]
    fn eval_is_deterministic() {
        let (_, _, enc, store) = fixture(small_cfg());
        let run = || {
            let mut tape = Tape::new();
            let l = enc.encode_labels(&mut tape, &store, &mut Mode::Eval);
            tape.value(l).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn name_ablation_changes_labels() {
        let (_, _, full, store) = fixture(small_cfg());
        let (_, _, ablated, _) = fixture(GraphEncoderConfig {
            use_name_embedding: false,
            ..small_cfg()
        });
        let encode = |enc: &GraphEncoder| {
            let mut tape = Tape::new();
            let l = enc.encode_labels(&mut tape, &store, &mut Mode::Eval);
            tape.value(l).clone()
        };
        assert!(encode(&full).max_abs_diff(&encode(&ablated)) > 1e-6);
    }

    #[test]
    fn bad_head_count() {
        let cfg = GraphEncoderConfig {
            n_heads: 3,
            ..small_cfg()
        };
        assert!(cfg.validate().is_err());
    }
}
