use std::collections::HashMap;

use super::TextError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Lowercased word tokens. Whitespace separates tokens and every other
/// non-alphanumeric character is emitted as a token of its own.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Token ids with a matching attention mask (1 on real tokens, 0 on padding).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of unpadded positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Copy truncated or padded to `len` positions.
    pub fn with_len(&self, len: usize) -> TokenSequence {
        let mut ids = self.ids.clone();
        let mut attention_mask = self.attention_mask.clone();
        ids.resize(len, PAD);
        attention_mask.resize(len, 0);
        TokenSequence { ids, attention_mask }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from a training corpus: tokens seen at least
    /// `min_freq` times, most frequent first (ties alphabetical), at most
    /// `max_vocab` of them, after the four specials.
    pub fn build<'a, I>(corpus: I, min_freq: usize, max_vocab: usize) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut docs = 0usize;
        for text in corpus {
            docs += 1;
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if docs == 0 {
            return Err(TextError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !SPECIALS.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_vocab);
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .collect();
        Ok(Self::from_tokens(tokens, min_freq))
    }

    fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Frequency cutoff used at build time (0 when loaded from a file).
    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Id of a token, falling back to `[UNK]`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Word ids without specials.
    pub fn encode_words(&self, text: &str) -> Vec<usize> {
        split_words(text).iter().map(|w| self.id(w)).collect()
    }

    /// `[CLS] w… [SEP]` padded to `max_len`; keeps the earliest words.
    pub fn tokenize(&self, text: &str, max_len: usize) -> TokenSequence {
        assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend(self.encode_words(text).into_iter().take(max_len - 2));
        ids.push(SEP);
        let active = ids.len();
        ids.resize(max_len, PAD);
        let attention_mask = (0..max_len).map(|i| u8::from(i < active)).collect();
        TokenSequence { ids, attention_mask }
    }

    /// One token per line; the first four lines are the specials.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self, TextError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(TextError::BadVocabFile("header must list [PAD] [UNK] [CLS] [SEP]".into()));
        }
        let vocab = Self::from_tokens(tokens, 0);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(TextError::BadVocabFile("duplicate token".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(["a b", "a"], 1, 100).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.id("a"), 4);
    }

    #[test]
    fn min_freq_drops_rare() {
        let v = Vocabulary::build(["a b", "a"], 2, 100).unwrap();
        assert!(!v.contains("b"));
        assert_eq!(v.tokenize("b", 4).ids, vec![CLS, UNK, SEP, PAD]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(Vocabulary::build(Vec::<&str>::new(), 1, 10), Err(TextError::EmptyCorpus));
    }

    #[test]
    fn tokenize_examples() {
        let v = Vocabulary::build(["hello world"], 1, 100).unwrap();
        let s = v.tokenize("Hello world", 5);
        assert_eq!(s.ids, vec![CLS, v.id("hello"), v.id("world"), SEP, PAD]);
        assert_eq!(s.attention_mask, vec![1, 1, 1, 1, 0]);
        let e = v.tokenize("", 4);
        assert_eq!(e.ids, vec![CLS, SEP, PAD, PAD]);
        assert_eq!(e.attention_mask, vec![1, 1, 0, 0]);
        let t = v.tokenize("hello world hello", 4);
        assert_eq!(t.ids, vec![CLS, v.id("hello"), v.id("world"), SEP]);
    }

    #[test]
    fn punctuation_split() {
        assert_eq!(split_words("Graph-based, HTC!"), ["graph", "-", "based", ",", "htc", "!"]);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(["x y z", "y"], 1, 100).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("[PAD]\n[UNK]\n[CLS]\n[SEP]\n"));
        let back = Vocabulary::from_file_str(&text).unwrap();
        assert_eq!(back.tokens, v.tokens);
        assert!(Vocabulary::from_file_str("a\nb\n").is_err());
    }
}
