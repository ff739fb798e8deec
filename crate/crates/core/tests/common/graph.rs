//! Label-encoder fixtures and a straight-line re-implementation over plain loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use htla::graph::{GraphEncoder, GraphEncoderConfig};
use htla::hierarchy::LabelTaxonomy;
use htla::numerics::{init, Mode, ParamId, ParamStore, Tape, Tensor};
use htla::text::Vocabulary;

use super::{bfs_distances, bfs_path, dense, RawTree};

pub struct Fixture {
    pub raw: RawTree,
    pub tax: LabelTaxonomy,
    pub vocab: Vocabulary,
    pub enc: GraphEncoder,
    pub store: ParamStore,
    pub tokens: ParamId,
}

pub fn fixture(k: usize, cfg: GraphEncoderConfig, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = RawTree::random(k, &mut rng);
    let tax = LabelTaxonomy::parse(&raw.to_text()).unwrap();
    // Only even labels are in the vocabulary; the rest embed as [UNK].
    let corpus: Vec<String> = (0..k).step_by(2).map(|i| format!("L{i}")).collect();
    let vocab = Vocabulary::build(corpus.iter().map(String::as_str).chain(["filler"]), 1, 100).unwrap();
    let mut store = ParamStore::new();
    let tokens = store.add("text.token_embeddings", init::uniform(&[vocab.len(), cfg.d_h], 0.5, &mut rng));
    let enc = GraphEncoder::new(cfg, &tax, &vocab, tokens, &mut store, &mut rng).unwrap();
    // Move off the small initial scale so every term matters.
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    Fixture {
        raw,
        tax,
        vocab,
        enc,
        store,
        tokens,
    }
}

pub fn random_cfg(rng: &mut impl Rng) -> GraphEncoderConfig {
    let n_heads = [1, 2, 4][rng.random_range(0..3)];
    GraphEncoderConfig {
        d_h: n_heads * rng.random_range(1..=3),
        d_p: rng.random_range(1..=4),
        n_heads,
        dropout: 0.1,
        use_name_embedding: rng.random_bool(0.8),
        use_node_embedding: rng.random_bool(0.8),
        use_label_enhancer: rng.random_bool(0.8),
    }
}

pub fn encode(f: &Fixture) -> Tensor {
    let mut tape = Tape::new();
    let l = f.enc.encode_labels(&mut tape, &f.store, &mut Mode::Eval);
    tape.value(l).clone()
}

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    let cols = t.last_dim();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let flat_a: Vec<f64> = a.iter().flatten().copied().collect();
    let flat_b: Vec<f64> = b.iter().flatten().copied().collect();
    dense::matmul(&flat_a, &flat_b, m, k, n).chunks(n).map(<[f64]>::to_vec).collect()
}

/// Label features recomputed from parameter values, indexed by parsed ids.
pub fn oracle(f: &Fixture) -> Vec<Vec<f64>> {
    let cfg = *f.enc.config();
    let (k, n) = (f.tax.num_labels(), f.tax.num_nodes());
    let (d, dp, heads) = (cfg.d_h, cfg.d_p, cfg.n_heads);
    let dh = d / heads;
    let p = |id: ParamId| mat(f.store.value(id));

    // Raw-index geometry, mapped onto parsed ids.
    let map = f.raw.node_map(&f.tax);
    let mut inv = vec![0; n];
    for (r, &t) in map.iter().enumerate() {
        inv[t] = r;
    }
    let adj = f.raw.adjacency();
    let dist = bfs_distances(&adj);
    let edge_of = |a: usize, b: usize| {
        // Edge id is the parsed id of the child endpoint.
        if f.raw.parent_node(a) == Some(b) { map[a] } else { map[b] }
    };

    let tokens = p(f.tokens);
    let node_table = p(f.enc.node_table);
    let mut g = vec![vec![0.0; d]; n];
    for i in 0..n {
        if cfg.use_node_embedding {
            for c in 0..d {
                g[i][c] += node_table[i][c];
            }
        }
        if cfg.use_name_embedding && i < k {
            let tok = f.vocab.id(&format!("l{}", inv[i]));
            for c in 0..d {
                g[i][c] += tokens[tok][c];
            }
        }
    }

    let spatial = p(f.enc.spatial_table);
    let ew = p(f.enc.edge_weights);
    let mut x = vec![vec![vec![0.0; dp]; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (ri, rj) = (inv[i], inv[j]);
            let path = bfs_path(&adj, ri, rj);
            let edges: Vec<usize> = path.windows(2).map(|w| edge_of(w[0], w[1])).collect();
            for q in 0..dp {
                let mut s = spatial[dist[ri][rj]][q];
                if !edges.is_empty() {
                    s += edges.iter().map(|&e| ew[e][q]).sum::<f64>() / edges.len() as f64;
                }
                x[i][j][q] = s;
            }
        }
    }

    let gp = f.enc.gpa;
    let (q, kk, v) = (mm(&g, &p(gp.w_q)), mm(&g, &p(gp.w_k)), mm(&g, &p(gp.w_v)));
    let (w1, w2, w3, w4) = (p(gp.w_1), p(gp.w_2), p(gp.w_3), p(gp.w_4));
    let mut a = vec![vec![vec![0.0; n]; n]; heads];
    let mut att = a.clone();
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for c in h * dh..(h + 1) * dh {
                    s += q[i][c] * kk[j][c];
                }
                s /= (dh as f64).sqrt();
                for r in 0..dp {
                    s += x[i][j][r] * w1[r][h];
                }
                a[h][i][j] = s;
            }
            att[h][i] = dense::softmax(&a[h][i]);
        }
    }
    let mut g1 = vec![vec![0.0; d]; n];
    for h in 0..heads {
        for i in 0..n {
            for c in h * dh..(h + 1) * dh {
                g1[i][c] = (0..n).map(|j| att[h][i][j] * v[j][c]).sum();
            }
        }
    }
    let mut pooled = vec![vec![0.0; dp]; n];
    for i in 0..n {
        let xout: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..dp).map(|r| (0..heads).map(|h| (a[h][i][j] + att[h][i][j]) * w2[h][r]).sum()).collect())
            .collect();
        for r in 0..dp {
            let col: Vec<f64> = (0..n).map(|j| xout[j][r]).collect();
            let sm = dense::softmax(&col);
            pooled[i][r] = col.iter().zip(&sm).map(|(c, s)| c * s).sum();
        }
    }
    let g2 = mm(&pooled, &w3);
    let sum: Mat = g1.iter().zip(&g2).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
    let nodes = mm(&sum, &w4);
    if !cfg.use_label_enhancer {
        return nodes[..k].to_vec();
    }
    let e = f.enc.enhancer;
    let (b1, b2) = (p(e.linear1_b)[0].clone(), p(e.linear2_b)[0].clone());
    let (gain, bias) = (p(e.ln_gain)[0].clone(), p(e.ln_bias)[0].clone());
    let hid: Mat = mm(&nodes, &p(e.linear1_w))
        .into_iter()
        .map(|r| r.iter().zip(&b1).map(|(x, b)| dense::gelu(x + b)).collect())
        .collect();
    let out = mm(&hid, &p(e.linear2_w));
    (0..k)
        .map(|i| {
            let res: Vec<f64> = (0..d).map(|c| nodes[i][c] + out[i][c] + b2[c]).collect();
            dense::layer_norm_row(&res, &gain, &bias)
        })
        .collect()
}
