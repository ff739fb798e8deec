//! Tiny corpora whose texts mention their labels by name.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use htla::hierarchy::LabelTaxonomy;
use htla::labels::LabelMatrix;
use htla::model::ModelConfig;
use htla::text::{TokenSequence, Vocabulary};

use super::RawTree;

pub const MAX_LEN: usize = 12;

pub fn small_cfg() -> ModelConfig {
    ModelConfig {
        d_h: 16,
        n_text_layers: 1,
        n_text_heads: 2,
        max_len: MAX_LEN,
        n_graph_heads: 2,
        d_p: 4,
        text_dropout: 0.0,
        graph_dropout: 0.0,
        ..ModelConfig::desk()
    }
}

pub struct Toy {
    pub tax: LabelTaxonomy,
    pub vocab: Vocabulary,
    pub seqs: Vec<TokenSequence>,
    pub gold: LabelMatrix,
}

/// Random taxonomy with `k` labels and `m` samples whose text mentions their
/// (ancestor-closed) labels plus a filler word.
pub fn toy(k: usize, m: usize, seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = RawTree::random(k, &mut rng);
    let tax = LabelTaxonomy::parse(&raw.to_text()).unwrap();
    let mut texts = Vec::new();
    let mut sets = Vec::new();
    for _ in 0..m {
        let leaf = rng.random_range(0..k);
        let mut set = vec![tax.id_of(&format!("L{leaf}")).unwrap()];
        set.extend(tax.ancestors(set[0]));
        set.sort_unstable();
        set.dedup();
        let mut words: Vec<String> = set.iter().map(|&l| tax.name(l).to_string()).collect();
        words.push(["the", "of", "and"][rng.random_range(0..3)].to_string());
        words.shuffle(&mut rng);
        texts.push(words.join(" "));
        sets.push(set);
    }
    let vocab = Vocabulary::build(texts.iter().map(String::as_str), 1, 1000).unwrap();
    let seqs = texts.iter().map(|t| vocab.tokenize(t, MAX_LEN)).collect();
    Toy {
        gold: LabelMatrix::from_sets(&sets, k),
        tax,
        vocab,
        seqs,
    }
}
