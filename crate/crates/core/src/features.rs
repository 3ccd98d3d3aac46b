//! Vocabularies and feature extraction.
//!
//! Four interchangeable engines turn a sample into a fixed-length real
//! vector: raw opcode frequencies, n-gram frequencies, and two embedding
//! engines (word2vec, hmm2vec) that concatenate per-symbol embeddings
//! weighted by symbol frequency.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};

/// Display name of the catch-all bucket for grams outside the top-K.
pub const OTHER_SYMBOL: &str = "<other>";

/// Which feature engine produced a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Raw,
    Ngram,
    Word2Vec,
    Hmm2Vec,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EngineKind::Raw => "raw",
            EngineKind::Ngram => "ngram",
            EngineKind::Word2Vec => "word2vec",
            EngineKind::Hmm2Vec => "hmm2vec",
        };
        f.write_str(s)
    }
}

/// Ordered top-K grams plus a trailing OTHER bucket.
///
/// Symbol order is frozen at construction; every feature vector and HMM
/// emission column built from this vocabulary uses the same indexing, which
/// is what makes weight vectors from different windows comparable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    n: usize,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Symbols in rank order; the last entry is always OTHER.
    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total symbol count including OTHER; the dimension of frequency vectors.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds at least OTHER
    }

    pub fn other_index(&self) -> usize {
        self.symbols.len() - 1
    }

    /// Index of a gram, falling back to the OTHER bucket.
    pub fn index_of(&self, gram: &str) -> usize {
        self.index.get(gram).copied().unwrap_or_else(|| self.other_index())
    }

    /// Encodes a sample's tokens as symbol indices (n = 1 vocabularies only).
    pub fn encode(&self, sample: &Sample) -> Vec<usize> {
        debug_assert_eq!(self.n, 1);
        sample.opcodes.iter().map(|t| self.index_of(t)).collect()
    }

    /// Plain-text dump, one symbol per line, for debugging.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }
}

fn gram_key(tokens: &[String]) -> String {
    tokens.join("|")
}

/// Counts overlapping n-grams across all samples and keeps the top K by
/// count (ties broken lexicographically), plus OTHER. Samples shorter than
/// n contribute nothing; if none is long enough the vocabulary is empty and
/// that is an error.
pub fn build_vocabulary(samples: &[Sample], k: usize, n: usize) -> Result<Vocabulary> {
    assert!(k >= 1, "k must be >= 1");
    assert!(n >= 1, "n must be >= 1");
    let mut counts: HashMap<String, u64> = HashMap::new();
    for sample in samples {
        if sample.opcodes.len() < n {
            continue;
        }
        for gram in sample.opcodes.windows(n) {
            *counts.entry(gram_key(gram)).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyVocabulary { n });
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    let mut symbols: Vec<String> = ranked.into_iter().map(|(g, _)| g).collect();
    symbols.push(OTHER_SYMBOL.to_string());
    let index = symbols.iter().take(symbols.len() - 1).cloned().zip(0..).collect();
    Ok(Vocabulary { symbols, n, index })
}

/// Rebuilds a vocabulary from an ordered symbol list whose last entry is
/// OTHER (the serialized form).
pub fn vocabulary_from_symbols(symbols: Vec<String>, n: usize) -> Result<Vocabulary> {
    if symbols.last().map(String::as_str) != Some(OTHER_SYMBOL) {
        return Err(Error::InvalidConfig(format!("symbol list must end with {OTHER_SYMBOL}")));
    }
    let index = symbols.iter().take(symbols.len() - 1).cloned().zip(0..).collect();
    Ok(Vocabulary { symbols, n, index })
}

/// A sample rendered as a fixed-length real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub engine: EngineKind,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Per-gram counts over a sample's overlapping n-grams, OTHER-bucketed.
fn gram_counts(sample: &Sample, vocab: &Vocabulary) -> Result<(Vec<f64>, usize)> {
    let n = vocab.n();
    if sample.opcodes.len() < n {
        return Err(Error::SampleTooShort { id: sample.id.clone(), len: sample.opcodes.len(), n });
    }
    let mut counts = vec![0.0; vocab.len()];
    let mut total = 0usize;
    if n == 1 {
        for token in &sample.opcodes {
            counts[vocab.index_of(token)] += 1.0;
            total += 1;
        }
    } else {
        for gram in sample.opcodes.windows(n) {
            counts[vocab.index_of(&gram_key(gram))] += 1.0;
            total += 1;
        }
    }
    Ok((counts, total))
}

/// Relative-frequency vector over the vocabulary; entries sum to 1.
pub fn frequency_vector(sample: &Sample, vocab: &Vocabulary, engine: EngineKind) -> Result<FeatureVector> {
    let (mut counts, total) = gram_counts(sample, vocab)?;
    for c in &mut counts {
        *c /= total as f64;
    }
    Ok(FeatureVector { values: counts, engine })
}

/// Source of an embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Word2Vec,
    Hmm2Vec,
}

impl EmbeddingSource {
    pub fn engine_kind(self) -> EngineKind {
        match self {
            EmbeddingSource::Word2Vec => EngineKind::Word2Vec,
            EmbeddingSource::Hmm2Vec => EngineKind::Hmm2Vec,
        }
    }
}

/// Per-symbol embedding vectors, aligned with a vocabulary's symbol order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub source: EmbeddingSource,
    pub dim: usize,
    /// vectors[i] is the embedding of vocabulary symbol i (OTHER included).
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(source: EmbeddingSource, dim: usize, vectors: Vec<Vec<f64>>) -> Result<EmbeddingTable> {
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::EmbeddingMismatch("embedding vectors differ in length".into()));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::EmbeddingMismatch("embedding contains non-finite entries".into()));
        }
        Ok(EmbeddingTable { source, dim, vectors })
    }

    /// Plain-text dump, `symbol v1 .. vd` per line.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for (symbol, vector) in vocab.symbols().iter().zip(&self.vectors) {
            out.push_str(symbol);
            for x in vector {
                out.push(' ');
                out.push_str(&format!("{x}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Frequency-weighted concatenation of per-symbol embeddings, in vocabulary
/// order: dimension |vocab| * d. Keeps one SVM weight per (symbol,
/// coordinate) pair so weight drift stays attributable to symbols.
pub fn embed_sample(sample: &Sample, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<FeatureVector> {
    if vocab.n() != 1 {
        return Err(Error::EmbeddingMismatch(format!("embedding engines need a unigram vocabulary, got n={}", vocab.n())));
    }
    if table.vectors.len() != vocab.len() {
        return Err(Error::EmbeddingMismatch(format!(
            "table covers {} symbols, vocabulary has {}",
            table.vectors.len(),
            vocab.len()
        )));
    }
    let (counts, total) = gram_counts(sample, vocab)?;
    let mut values = vec![0.0; vocab.len() * table.dim];
    for (i, count) in counts.iter().enumerate() {
        let freq = count / total as f64;
        let out = &mut values[i * table.dim..(i + 1) * table.dim];
        for (o, e) in out.iter_mut().zip(&table.vectors[i]) {
            *o = freq * e;
        }
    }
    Ok(FeatureVector { values, engine: table.source.engine_kind() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn sample(tokens: &[&str]) -> Sample {
        Sample {
            id: "s".into(),
            family: "f".into(),
            created: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            opcodes: tokens.iter().map(|t| t.to_string()).collect(),
        }
    }

    #[test]
    fn vocabulary_top_k_with_lexicographic_ties() {
        let v = build_vocabulary(&[sample(&["a", "b", "a", "b"])], 2, 1).unwrap();
        assert_eq!(v.symbols(), &["a", "b", OTHER_SYMBOL]);
    }

    #[test]
    fn vocabulary_counts_overlapping_bigrams() {
        // a,b,a,b has 3 overlapping 2-grams: ab, ba, ab.
        let v = build_vocabulary(&[sample(&["a", "b", "a", "b"])], 2, 2).unwrap();
        assert_eq!(v.symbols(), &["a|b", "b|a", OTHER_SYMBOL]);
    }

    #[test]
    fn vocabulary_shrinks_when_k_exceeds_distinct_grams() {
        let v = build_vocabulary(&[sample(&["a", "b", "a", "b"])], 10, 1).unwrap();
        assert_eq!(v.symbols(), &["a", "b", OTHER_SYMBOL]);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn vocabulary_requires_a_long_enough_sample() {
        let err = build_vocabulary(&[sample(&["a", "b"])], 2, 3);
        assert!(matches!(err, Err(Error::EmptyVocabulary { n: 3 })));
    }

    #[test]
    fn frequency_vector_unigram() {
        let v = build_vocabulary(&[sample(&["a", "b", "a", "b"])], 2, 1).unwrap();
        let f = frequency_vector(&sample(&["a", "b", "a", "b"]), &v, EngineKind::Raw).unwrap();
        assert_eq!(f.values, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn frequency_vector_all_other() {
        let v = build_vocabulary(&[sample(&["a", "b"])], 2, 1).unwrap();
        let f = frequency_vector(&sample(&["c", "c"]), &v, EngineKind::Raw).unwrap();
        assert_eq!(f.values, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn frequency_vector_bigrams() {
        // Hand enumeration: grams of [a,b,a,b] are ab, ba, ab -> (2/3, 1/3, 0).
        let v = build_vocabulary(&[sample(&["a", "b", "a", "b"])], 2, 2).unwrap();
        let f = frequency_vector(&sample(&["a", "b", "a", "b"]), &v, EngineKind::Ngram).unwrap();
        assert!((f.values[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.values[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.values[2], 0.0);
    }

    #[test]
    fn frequency_vector_rejects_short_sample() {
        let v = build_vocabulary(&[sample(&["a", "b", "a"])], 2, 2).unwrap();
        let err = frequency_vector(&sample(&["a"]), &v, EngineKind::Ngram);
        assert!(matches!(err, Err(Error::SampleTooShort { .. })));
    }

    fn abc_vocab() -> Vocabulary {
        build_vocabulary(&[sample(&["a", "a", "b"])], 2, 1).unwrap()
    }

    fn table(vectors: Vec<Vec<f64>>) -> EmbeddingTable {
        EmbeddingTable::new(EmbeddingSource::Word2Vec, 2, vectors).unwrap()
    }

    #[test]
    fn embed_sample_concatenates_frequency_scaled_vectors() {
        let vocab = abc_vocab(); // [a, b, <other>]
        let t = table(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]);
        let f = embed_sample(&sample(&["a", "a"]), &vocab, &t).unwrap();
        assert_eq!(f.values, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let f = embed_sample(&sample(&["a", "b"]), &vocab, &t).unwrap();
        assert_eq!(f.values, vec![0.5, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert_eq!(f.engine, EngineKind::Word2Vec);
    }

    #[test]
    fn embed_sample_zero_table_gives_zero_vector() {
        let vocab = abc_vocab();
        let t = table(vec![vec![0.0; 2]; 3]);
        let f = embed_sample(&sample(&["a", "b", "c"]), &vocab, &t).unwrap();
        assert_eq!(f.values, vec![0.0; 6]);
    }

    #[test]
    fn embed_sample_rejects_undersized_table() {
        let vocab = abc_vocab();
        let t = table(vec![vec![0.0; 2]; 2]);
        assert!(matches!(embed_sample(&sample(&["a"]), &vocab, &t), Err(Error::EmbeddingMismatch(_))));
    }

    proptest! {
        /// Unigram frequency vectors are invariant under token permutation
        /// and always sum to 1.
        #[test]
        fn unigram_frequencies_permutation_invariant(
            tokens in proptest::collection::vec(prop_oneof!["a", "b", "c", "d"], 1..40),
            shift in 0usize..40,
        ) {
            let vocab = build_vocabulary(&[sample(&["a", "b", "c"])], 3, 1).unwrap();
            let base = sample(&tokens.iter().map(String::as_str).collect::<Vec<_>>());
            let mut rotated_tokens = tokens.clone();
            rotated_tokens.rotate_left(shift % tokens.len().max(1));
            let rotated = sample(&rotated_tokens.iter().map(String::as_str).collect::<Vec<_>>());

            let f1 = frequency_vector(&base, &vocab, EngineKind::Raw).unwrap();
            let f2 = frequency_vector(&rotated, &vocab, EngineKind::Raw).unwrap();
            prop_assert_eq!(&f1.values, &f2.values);
            let sum: f64 = f1.values.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        /// Scaling every embedding by c scales the feature vector by c.
        #[test]
        fn embedding_is_linear_in_table(c in -3.0f64..3.0) {
            let vocab = build_vocabulary(&[sample(&["a", "b", "c"])], 3, 1).unwrap();
            let base = vec![vec![0.3, -0.7], vec![1.5, 0.2], vec![0.0, 0.4], vec![0.1, 0.1]];
            let scaled: Vec<Vec<f64>> = base.iter().map(|v| v.iter().map(|x| c * x).collect()).collect();
            let t1 = EmbeddingTable::new(EmbeddingSource::Hmm2Vec, 2, base).unwrap();
            let t2 = EmbeddingTable::new(EmbeddingSource::Hmm2Vec, 2, scaled).unwrap();
            let s = sample(&["a", "b", "b", "z"]);
            let f1 = embed_sample(&s, &vocab, &t1).unwrap();
            let f2 = embed_sample(&s, &vocab, &t2).unwrap();
            for (x1, x2) in f1.values.iter().zip(&f2.values) {
                prop_assert!((c * x1 - x2).abs() < 1e-12);
            }
        }
    }
}
