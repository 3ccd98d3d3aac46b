//! Skip-gram-with-negative-sampling embeddings over opcode sequences.
//!
//! A deliberately small trainer: dense vectors, a unigram^0.75 negative
//! table, frequent-token subsampling, and a linearly decaying learning
//! rate. Deterministic for a fixed seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::features::{EmbeddingSource, EmbeddingTable, Vocabulary};

/// Training hyperparameters. Defaults are the conventional published
/// constants for skip-gram with negative sampling.
#[derive(Debug, Clone, Serialize)]
pub struct SgnsParams {
    /// Embedding length.
    pub dim: usize,
    /// Context window radius; actual windows shrink uniformly at random.
    pub context_window: usize,
    /// Negative samples per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to zero over training.
    pub learning_rate: f64,
    /// Frequent-token subsampling threshold.
    pub subsample_threshold: f64,
    pub rng_seed: u64,
}

impl Default for SgnsParams {
    fn default() -> Self {
        SgnsParams {
            dim: 2,
            context_window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            subsample_threshold: 1e-3,
            rng_seed: 0,
        }
    }
}

impl SgnsParams {
    fn validate(&self) -> Result<()> {
        let positive = self.dim >= 1
            && self.context_window >= 1
            && self.negatives >= 1
            && self.epochs >= 1
            && self.learning_rate > 0.0
            && self.subsample_threshold > 0.0;
        if !positive {
            return Err(Error::InvalidConfig("all SGNS parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Trained embeddings plus the per-epoch average loss trace.
#[derive(Debug, Clone)]
pub struct SgnsOutcome {
    pub table: EmbeddingTable,
    pub epoch_loss: Vec<f64>,
    /// Set when the corpus has fewer than two distinct trainable tokens,
    /// leaving the objective without contrastive signal.
    pub degenerate_corpus: bool,
}

/// Numerically safe -ln sigmoid(x) = softplus(-x).
fn neg_log_sigmoid(x: f64) -> f64 {
    // softplus(y) = max(y, 0) + ln(1 + exp(-|y|)) with y = -x
    (-x).max(0.0) + (-(-x).abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and exact gradients for one (center, context, label) pair.
///
/// loss = -ln sigmoid(s) for label 1 and -ln sigmoid(-s) for label 0,
/// where s = center . context. Returns (grad_center, grad_context, loss).
pub fn sgns_gradient(center: &[f64], context: &[f64], label: u8) -> (Vec<f64>, Vec<f64>, f64) {
    assert_eq!(center.len(), context.len(), "vector lengths differ");
    let s: f64 = center.iter().zip(context).map(|(a, b)| a * b).sum();
    let (loss, residual) = match label {
        1 => (neg_log_sigmoid(s), sigmoid(s) - 1.0),
        _ => (neg_log_sigmoid(-s), sigmoid(s)),
    };
    let grad_center: Vec<f64> = context.iter().map(|&c| residual * c).collect();
    let grad_context: Vec<f64> = center.iter().map(|&c| residual * c).collect();
    (grad_center, grad_context, loss)
}

/// Probability of keeping one occurrence of a token with corpus frequency
/// `frequency` under threshold `t`: min(1, sqrt(t/f) + t/f).
pub fn subsample_keep_probability(frequency: f64, t: f64) -> f64 {
    if frequency <= 0.0 {
        return 1.0;
    }
    let ratio = t / frequency;
    (ratio.sqrt() + ratio).min(1.0)
}

fn sequence_rng(seed: u64, epoch: usize, sample_id: &str) -> ChaCha8Rng {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    (seed, epoch, sample_id).hash(&mut h);
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Cumulative-weight table for unigram^0.75 negative sampling.
struct NegativeTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl NegativeTable {
    fn new(counts: &[u64]) -> NegativeTable {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut total = 0.0;
        for &c in counts {
            total += (c as f64).powf(0.75);
            cumulative.push(total);
        }
        NegativeTable { cumulative, total }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u = rng.random_range(0.0..self.total);
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// Trains input-side embeddings over the samples' opcode sequences.
///
/// Tokens outside the vocabulary's top-K carry no training signal and are
/// removed from the sequences; OTHER keeps the zero embedding in the
/// returned table. Input vectors start uniform in [-0.5/d, 0.5/d], output
/// vectors at zero.
pub fn train_word2vec(samples: &[Sample], vocab: &Vocabulary, params: &SgnsParams) -> Result<SgnsOutcome> {
    params.validate()?;
    if vocab.n() != 1 {
        return Err(Error::InvalidConfig("word2vec needs a unigram vocabulary".into()));
    }
    let trainable = vocab.other_index(); // indices 0..trainable are real tokens
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);

    // Encode, dropping OTHER positions. Sample ids ride along: each
    // sequence's stochastic choices are seeded from (seed, epoch, id), so a
    // sample shared by two overlapping training windows sees identical
    // subsampling and negative draws in both.
    let mut counts = vec![0u64; trainable];
    let mut sequences: Vec<(&str, Vec<usize>)> = Vec::with_capacity(samples.len());
    for sample in samples {
        let seq: Vec<usize> =
            sample.opcodes.iter().map(|t| vocab.index_of(t)).filter(|&i| i < trainable).collect();
        for &i in &seq {
            counts[i] += 1;
        }
        if seq.len() >= 2 {
            sequences.push((&sample.id, seq));
        }
    }
    let total_tokens: u64 = counts.iter().sum();
    let distinct = counts.iter().filter(|&&c| c > 0).count();
    let degenerate_corpus = distinct < 2;

    let d = params.dim;
    let mut input: Vec<Vec<f64>> = (0..trainable)
        .map(|_| (0..d).map(|_| rng.random_range(-0.5..0.5) / d as f64).collect())
        .collect();
    let mut output: Vec<Vec<f64>> = vec![vec![0.0; d]; trainable];

    let mut epoch_loss = Vec::with_capacity(params.epochs);
    if total_tokens > 0 && !sequences.is_empty() {
        let negative_table = NegativeTable::new(&counts);
        let keep: Vec<f64> = counts
            .iter()
            .map(|&c| subsample_keep_probability(c as f64 / total_tokens as f64, params.subsample_threshold))
            .collect();
        let total_positions: u64 = sequences.iter().map(|(_, s)| s.len() as u64).sum();
        let total_steps = (params.epochs as u64 * total_positions) as f64;
        let mut step = 0u64;
        let mut grad_buffer = vec![0.0; d];

        for epoch in 0..params.epochs {
            let mut loss_sum = 0.0;
            let mut loss_pairs = 0u64;
            for (id, seq) in &sequences {
                let mut rng = sequence_rng(params.rng_seed, epoch, id);
                let kept: Vec<usize> = seq.iter().copied().filter(|&w| rng.random_range(0.0..1.0) < keep[w]).collect();
                step += seq.len() as u64;
                let alpha = params.learning_rate * (1.0 - step as f64 / total_steps).max(0.0);
                for (pos, &center) in kept.iter().enumerate() {
                    let radius = rng.random_range(1..=params.context_window);
                    let lo = pos.saturating_sub(radius);
                    let hi = (pos + radius).min(kept.len() - 1);
                    for context_pos in lo..=hi {
                        if context_pos == pos {
                            continue;
                        }
                        let context = kept[context_pos];
                        grad_buffer.fill(0.0);
                        // positive pair
                        let (pair_loss, residual) = {
                            let s: f64 = input[center].iter().zip(&output[context]).map(|(a, b)| a * b).sum();
                            (neg_log_sigmoid(s), sigmoid(s) - 1.0)
                        };
                        loss_sum += pair_loss;
                        loss_pairs += 1;
                        for k in 0..d {
                            grad_buffer[k] += residual * output[context][k];
                            output[context][k] -= alpha * residual * input[center][k];
                        }
                        // negatives
                        for _ in 0..params.negatives {
                            let negative = negative_table.sample(&mut rng);
                            if negative == context {
                                continue;
                            }
                            let s: f64 = input[center].iter().zip(&output[negative]).map(|(a, b)| a * b).sum();
                            let residual = sigmoid(s);
                            loss_sum += neg_log_sigmoid(-s);
                            for k in 0..d {
                                grad_buffer[k] += residual * output[negative][k];
                                output[negative][k] -= alpha * residual * input[center][k];
                            }
                        }
                        for k in 0..d {
                            input[center][k] -= alpha * grad_buffer[k];
                        }
                    }
                }
            }
            epoch_loss.push(if loss_pairs > 0 { loss_sum / loss_pairs as f64 } else { 0.0 });
        }
    }

    // OTHER gets the zero embedding: no training signal exists for it.
    let mut vectors = input;
    vectors.push(vec![0.0; d]);
    let table = EmbeddingTable::new(EmbeddingSource::Word2Vec, d, vectors)?;
    Ok(SgnsOutcome { table, epoch_loss, degenerate_corpus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_vocabulary;
    use chrono::NaiveDate;

    fn sample(tokens: Vec<String>) -> Sample {
        Sample {
            id: "s".into(),
            family: "f".into(),
            created: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            opcodes: tokens,
        }
    }

    fn alternating(a: &str, b: &str, len: usize) -> Sample {
        sample((0..len).map(|i| if i % 2 == 0 { a.to_string() } else { b.to_string() }).collect())
    }

    #[test]
    fn gradient_at_zero_vectors_is_log_two_with_zero_gradients() {
        let (gc, gx, loss) = sgns_gradient(&[0.0, 0.0], &[0.0, 0.0], 1);
        assert!((loss - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(gc, vec![0.0, 0.0]);
        assert_eq!(gx, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_loss_matches_scalar_evaluation() {
        // -ln sigmoid(1) = ln(1 + e^-1)
        let (_, _, loss) = sgns_gradient(&[1.0, 0.0], &[1.0, 0.0], 1);
        assert!((loss - (-1.0f64).exp().ln_1p()).abs() < 1e-15);
        assert!((loss - 0.313_261_687_518_222_8).abs() < 1e-12);
    }

    /// Central finite differences as the independent check on the analytic
    /// gradient, h = 1e-5.
    fn finite_difference(center: &[f64], context: &[f64], label: u8) -> (Vec<f64>, Vec<f64>) {
        let h = 1e-5;
        let loss_of = |c: &[f64], x: &[f64]| sgns_gradient(c, x, label).2;
        let mut gc = vec![0.0; center.len()];
        let mut gx = vec![0.0; context.len()];
        for k in 0..center.len() {
            let mut plus = center.to_vec();
            let mut minus = center.to_vec();
            plus[k] += h;
            minus[k] -= h;
            gc[k] = (loss_of(&plus, context) - loss_of(&minus, context)) / (2.0 * h);
        }
        for k in 0..context.len() {
            let mut plus = context.to_vec();
            let mut minus = context.to_vec();
            plus[k] += h;
            minus[k] -= h;
            gx[k] = (loss_of(center, &plus) - loss_of(center, &minus)) / (2.0 * h);
        }
        (gc, gx)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..100 {
            let dim = rng.random_range(1..6);
            let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let context: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let label = rng.random_range(0..2) as u8;
            let (gc, gx, _) = sgns_gradient(&center, &context, label);
            let (nc, nx) = finite_difference(&center, &context, label);
            for (analytic, numeric) in gc.iter().zip(&nc).chain(gx.iter().zip(&nx)) {
                let scale = numeric.abs().max(1e-8);
                assert!((analytic - numeric).abs() / scale < 1e-4, "trial {trial}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn subsampling_retention_matches_expectation() {
        let t = 1e-3;
        let frequency = 0.05;
        let expected = subsample_keep_probability(frequency, t);
        assert!(expected < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trials = 100_000;
        let kept = (0..trials).filter(|_| rng.random_range(0.0..1.0) < expected).count();
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        let empirical = kept as f64 / trials as f64;
        assert!((empirical - expected).abs() < 3.0 * sigma, "{empirical} vs {expected}");
    }

    #[test]
    fn rare_tokens_are_always_kept() {
        assert_eq!(subsample_keep_probability(1e-6, 1e-3), 1.0);
    }

    fn training_fixture() -> (Vec<Sample>, Vocabulary) {
        // a and b always co-occur; c lives in separate sequences and only
        // ever meets a as a sampled negative.
        let mut samples = vec![alternating("a", "b", 400)];
        for _ in 0..4 {
            samples.push(sample(vec!["c".into(); 50]));
        }
        let vocab = build_vocabulary(&samples, 3, 1).unwrap();
        (samples, vocab)
    }

    fn cosine(u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (nu * nv)
    }

    #[test]
    fn cooccurring_tokens_embed_closer_than_negative_only_tokens() {
        let (samples, vocab) = training_fixture();
        // Every token is frequent in this tiny corpus; a threshold of 1
        // keeps them all so each epoch sees the full sequence.
        let params =
            SgnsParams { context_window: 1, subsample_threshold: 1.0, rng_seed: 13, ..Default::default() };
        let outcome = train_word2vec(&samples, &vocab, &params).unwrap();
        assert!(!outcome.degenerate_corpus);

        let idx = |t: &str| vocab.index_of(t);
        let v = &outcome.table.vectors;
        let ab = cosine(&v[idx("a")], &v[idx("b")]);
        let ac = cosine(&v[idx("a")], &v[idx("c")]);
        assert!(ab > ac, "cos(a,b)={ab} should exceed cos(a,c)={ac}");

        // Loss strictly decreases over the first epochs on this easy corpus.
        let losses = &outcome.epoch_loss;
        assert!(losses.len() >= 5);
        for w in losses[..5].windows(2) {
            assert!(w[1] < w[0], "epoch losses not decreasing: {losses:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (samples, vocab) = training_fixture();
        let params = SgnsParams { rng_seed: 99, ..Default::default() };
        let a = train_word2vec(&samples, &vocab, &params).unwrap();
        let b = train_word2vec(&samples, &vocab, &params).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.epoch_loss, b.epoch_loss);
    }

    #[test]
    fn single_token_corpus_stays_finite_and_is_flagged() {
        let samples = vec![sample(vec!["a".into(); 100])];
        let vocab = build_vocabulary(&samples, 2, 1).unwrap();
        let outcome = train_word2vec(&samples, &vocab, &SgnsParams::default()).unwrap();
        assert!(outcome.degenerate_corpus);
        assert!(outcome.table.vectors.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn other_symbol_gets_zero_embedding() {
        let (samples, vocab) = training_fixture();
        let outcome = train_word2vec(&samples, &vocab, &SgnsParams::default()).unwrap();
        assert_eq!(outcome.table.vectors[vocab.other_index()], vec![0.0, 0.0]);
    }
}
