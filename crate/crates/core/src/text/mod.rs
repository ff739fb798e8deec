//! Tokenization, vocabulary, and the transformer text encoder that pools the
//! `[CLS]` position into one feature vector per sample.

mod encoder;
mod vocab;

use thiserror::Error;

pub use encoder::{trim_padding, EncodedText, TextEncoder, TextEncoderConfig};
pub(crate) use encoder::{layer_norm, linear};
pub use vocab::{split_words, TokenSequence, Vocabulary, CLS, PAD, SEP, SPECIALS, UNK};

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("malformed vocabulary file: {0}")]
    BadVocabFile(String),
    #[error("text encoder configuration: {0}")]
    Config(String),
    #[error("sequence length {len} exceeds the position table ({max_len})")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("batch sequences must share one padded length: expected {expected}, found {found}")]
    RaggedBatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
}
