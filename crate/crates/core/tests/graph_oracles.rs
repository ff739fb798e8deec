//! Label encoder against a straight-line re-implementation over plain loops.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::graph::{encode, fixture, oracle, random_cfg};
use htla::graph::GraphEncoderConfig;
use htla::numerics::{grad_check, GradCheckConfig, Mode, Tape, Tensor};

#[test]
fn matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let k = rng.random_range(1..=8);
        let cfg = random_cfg(&mut rng);
        let f = fixture(k, cfg, case);
        let got = encode(&f);
        let want = oracle(&f);
        assert_eq!(got.shape(), &[k, cfg.d_h]);
        for (i, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                let g = got.row(i)[c];
                assert!((g - w).abs() < 1e-10, "case {case} ({cfg:?}) label {i} col {c}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn attention_rows_normalized_and_edges_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let k = rng.random_range(1..=8);
        let f = fixture(k, random_cfg(&mut rng), 1000 + case);
        let n = f.tax.num_nodes();
        let mut tape = Tape::new();
        let g = f.enc.init_node_features(&mut tape, &f.store);
        let x = f.enc.init_edge_features(&mut tape, &f.store);
        let xv = tape.value(x).clone();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(xv.row(i * n + j), xv.row(j * n + i), "case {case} ({i},{j})");
            }
        }
        let out = f.enc.gpa_forward(&mut tape, &f.store, g, x);
        let att = tape.value(out.attention);
        for r in 0..att.rows() {
            let s: f64 = att.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "case {case} row {r}: {s}");
        }
    }
}

#[test]
fn gradients_through_label_encoding() {
    for (seed, enhancer) in [(11, true), (12, false)] {
        let cfg = GraphEncoderConfig {
            d_h: 6,
            d_p: 3,
            n_heads: 2,
            dropout: 0.0,
            use_label_enhancer: enhancer,
            ..GraphEncoderConfig::default()
        };
        let mut f = fixture(6, cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Tensor::from_fn(&[6, 6], |_| rng.random_range(-1.0..1.0));
        let enc = f.enc.clone();
        let report = grad_check(&mut f.store, &GradCheckConfig::default(), |s, t| {
            let l = enc.encode_labels(t, s, &mut Mode::Eval);
            let w = t.leaf(weights.clone());
            let prod = t.mul(l, w);
            t.sum(prod)
        });
        assert!(report.max_rel_error < 1e-4, "{report:#?}");
        for p in &report.params {
            if p.name.starts_with("graph.") && (enhancer || !p.name.starts_with("graph.enhancer")) {
                assert!(p.max_abs_grad > 0.0, "no gradient reaches `{}`", p.name);
            }
        }
    }
}

#[test]
fn ablations_change_label_features() {
    let base = GraphEncoderConfig {
        d_h: 8,
        d_p: 3,
        n_heads: 2,
        ..GraphEncoderConfig::default()
    };
    let full = fixture(7, base, 3);
    let reference = encode(&full);
    for cfg in [
        GraphEncoderConfig {
            use_name_embedding: false,
            ..base
        },
        GraphEncoderConfig {
            use_node_embedding: false,
            ..base
        },
        GraphEncoderConfig {
            use_label_enhancer: false,
            ..base
        },
    ] {
        let mut ablated = fixture(7, cfg, 3);
        ablated.store = full.store.clone();
        assert!(encode(&ablated).max_abs_diff(&reference) > 1e-6, "{cfg:?}");
    }
}
