//! Discrete-observation hidden Markov models.
//!
//! Implements the two HMM problems the pipeline needs: scoring a sequence
//! against a model (scaled forward algorithm, reported as log likelihood
//! per opcode) and fitting a model to a set of sequences (Baum-Welch with
//! seeded restarts). Also extracts per-symbol embeddings from the emission
//! matrix of a trained model.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{EmbeddingSource, EmbeddingTable, Vocabulary};

/// Probability floor applied to every estimated entry before renormalizing,
/// so symbols unseen on one side of a spike still score finitely.
const PROB_FLOOR: f64 = 1e-10;

/// lambda = (A, B, pi) with N hidden states over M observation symbols.
/// Column m of B corresponds to symbol index m of the vocabulary the
/// training sequences were encoded with.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    /// N x N state transition matrix, row stochastic.
    pub a: Array2<f64>,
    /// N x M emission matrix, row stochastic.
    pub b: Array2<f64>,
    /// Initial state distribution, length N.
    pub pi: Array1<f64>,
}

impl HmmModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_symbols(&self) -> usize {
        self.b.ncols()
    }

    fn check_sequence(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&bad) = seq.iter().find(|&&s| s >= self.n_symbols()) {
            return Err(Error::SymbolOutOfRange { symbol: bad, n_symbols: self.n_symbols() });
        }
        Ok(())
    }

    /// Stationary distribution of A by power iteration. The probability
    /// floor keeps A strictly positive, so the fixed point is unique.
    pub fn stationary(&self) -> Array1<f64> {
        let n = self.n_states();
        let mut x = Array1::from_elem(n, 1.0 / n as f64);
        for _ in 0..500 {
            let next = x.dot(&self.a);
            let sum = next.sum();
            let next = next / sum;
            let diff: f64 = (&next - &x).iter().map(|d| d.abs()).sum();
            x = next;
            if diff < 1e-14 {
                break;
            }
        }
        x
    }
}

/// Training settings for Baum-Welch.
#[derive(Debug, Clone, Serialize)]
pub struct HmmTrainConfig {
    pub n_states: usize,
    pub max_iterations: usize,
    /// Stop when total log-likelihood improves by less than this per
    /// observed symbol.
    pub min_log_improvement: f64,
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for HmmTrainConfig {
    fn default() -> Self {
        HmmTrainConfig {
            n_states: 2,
            max_iterations: 100,
            min_log_improvement: 1e-4,
            restarts: 1,
            rng_seed: 0,
        }
    }
}

/// Record of one training run: per-iteration total log-likelihood of the
/// restart that won, and which restart it was.
#[derive(Debug, Clone, Serialize)]
pub struct HmmTrainLog {
    pub chosen_restart: usize,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub log_likelihood_per_iteration: Vec<f64>,
}

/// Scaled forward pass. Returns per-step scale sums and the filtered state
/// distribution at each step; log P(O | lambda) = sum of ln(scale).
fn forward_scaled(model: &HmmModel, seq: &[usize]) -> (Vec<f64>, Array2<f64>) {
    let n = model.n_states();
    let t_len = seq.len();
    let mut alphas = Array2::zeros((t_len, n));
    let mut scales = vec![0.0; t_len];

    // A zero scale means the model assigns the prefix probability 0 (only
    // possible for hand-written models; trained ones are floored). Reset to
    // uniform so later steps stay finite; ln(0) makes the total -inf.
    let renormalize = |row: &mut Array1<f64>| -> f64 {
        let scale = row.sum();
        if scale > 0.0 {
            *row /= scale;
        } else {
            row.fill(1.0 / n as f64);
        }
        scale
    };

    let mut row = &model.pi * &model.b.column(seq[0]);
    scales[0] = renormalize(&mut row);
    alphas.row_mut(0).assign(&row);

    for t in 1..t_len {
        let predicted = row.dot(&model.a);
        row = &predicted * &model.b.column(seq[t]);
        scales[t] = renormalize(&mut row);
        alphas.row_mut(t).assign(&row);
    }
    (scales, alphas)
}

/// Backward pass using the forward pass's scale factors.
fn backward_scaled(model: &HmmModel, seq: &[usize], scales: &[f64]) -> Array2<f64> {
    let n = model.n_states();
    let t_len = seq.len();
    let mut betas = Array2::zeros((t_len, n));
    betas.row_mut(t_len - 1).fill(1.0 / scales[t_len - 1]);
    for t in (0..t_len - 1).rev() {
        let next = &betas.row(t + 1) * &model.b.column(seq[t + 1]);
        let row = model.a.dot(&next);
        betas.row_mut(t).assign(&(row / scales[t]));
    }
    betas
}

/// Log P(O | lambda) via the scaled forward algorithm.
pub fn log_likelihood(model: &HmmModel, seq: &[usize]) -> Result<f64> {
    model.check_sequence(seq)?;
    let (scales, _) = forward_scaled(model, seq);
    Ok(scales.iter().map(|s| s.ln()).sum())
}

/// Log likelihood per opcode: log P(O | lambda) / T. Length-normalized so
/// scores are comparable across sequences.
pub fn score_llpo(model: &HmmModel, seq: &[usize]) -> Result<f64> {
    Ok(log_likelihood(model, seq)? / seq.len() as f64)
}

/// Expected-count accumulators pooled across sequences in one EM iteration.
struct Accumulators {
    pi: Array1<f64>,
    trans_num: Array2<f64>,
    trans_den: Array1<f64>,
    emit_num: Array2<f64>,
    emit_den: Array1<f64>,
    log_likelihood: f64,
}

impl Accumulators {
    fn new(n: usize, m: usize) -> Accumulators {
        Accumulators {
            pi: Array1::zeros(n),
            trans_num: Array2::zeros((n, n)),
            trans_den: Array1::zeros(n),
            emit_num: Array2::zeros((n, m)),
            emit_den: Array1::zeros(n),
            log_likelihood: 0.0,
        }
    }
}

fn accumulate_sequence(model: &HmmModel, seq: &[usize], acc: &mut Accumulators) {
    let n = model.n_states();
    let t_len = seq.len();
    let (scales, alphas) = forward_scaled(model, seq);
    let betas = backward_scaled(model, seq, &scales);
    acc.log_likelihood += scales.iter().map(|s| s.ln()).sum::<f64>();

    // gamma_t(i) = alpha_hat_t(i) * beta_hat_t(i) * scale_t; the scaled
    // passes make it sum to 1 up to rounding.
    for t in 0..t_len {
        let mut gamma: Array1<f64> = (&alphas.row(t) * &betas.row(t)) * scales[t];
        let sum = gamma.sum();
        gamma /= sum;
        if t == 0 {
            acc.pi += &gamma;
        }
        if t + 1 < t_len {
            acc.trans_den += &gamma;
        }
        let symbol = seq[t];
        for i in 0..n {
            acc.emit_num[[i, symbol]] += gamma[i];
        }
        acc.emit_den += &gamma;
    }

    // xi_t(i, j) = alpha_t(i) a_ij b_j(o_{t+1}) beta_{t+1}(j)
    for t in 0..t_len - 1 {
        let next_obs = seq[t + 1];
        let mut xi = Array2::zeros((n, n));
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = alphas[[t, i]] * model.a[[i, j]] * model.b[[j, next_obs]] * betas[[t + 1, j]];
                xi[[i, j]] = v;
                total += v;
            }
        }
        xi /= total;
        acc.trans_num += &xi;
    }
}

fn floor_and_normalize_row(mut row: ndarray::ArrayViewMut1<'_, f64>) {
    let sum = row.sum();
    if sum <= 0.0 {
        let uniform = 1.0 / row.len() as f64;
        row.fill(uniform);
        return;
    }
    row.mapv_inplace(|x| (x / sum).max(PROB_FLOOR));
    let sum = row.sum();
    row.mapv_inplace(|x| x / sum);
}

fn maximization(acc: &Accumulators, n_sequences: usize) -> HmmModel {
    let n = acc.trans_num.nrows();
    let m = acc.emit_num.ncols();
    let mut a = Array2::zeros((n, n));
    let mut b = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] = acc.trans_num[[i, j]] / acc.trans_den[i].max(f64::MIN_POSITIVE);
        }
        for k in 0..m {
            b[[i, k]] = acc.emit_num[[i, k]] / acc.emit_den[i].max(f64::MIN_POSITIVE);
        }
    }
    let mut pi = &acc.pi / n_sequences as f64;
    for i in 0..n {
        floor_and_normalize_row(a.row_mut(i));
        floor_and_normalize_row(b.row_mut(i));
    }
    floor_and_normalize_row(pi.view_mut());
    HmmModel { a, b, pi }
}

/// Initialization for one restart.
///
/// The base start (restart 0) is near-uniform with a 0.05 perturbation.
/// On weakly structured data EM then settles into the stable marginal fit,
/// which keeps models trained on overlapping windows comparable. Later
/// restarts draw each row entry uniform in [0.05, 1]: strong asymmetry
/// escapes the plateau where all states share one emission row, which the
/// near-uniform start cannot leave when the data has real state structure.
fn initial_model(n: usize, m: usize, seed: u64, restart: usize) -> HmmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = |len: usize| -> Array1<f64> {
        let mut row = if restart == 0 {
            Array1::from_shape_fn(len, |_| 1.0 / len as f64 + rng.random_range(-0.05..0.05)).mapv(|x: f64| x.max(1e-3))
        } else {
            Array1::from_shape_fn(len, |_| rng.random_range(0.05..1.0))
        };
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
        row
    };
    let mut a = Array2::zeros((n, n));
    let mut b = Array2::zeros((n, m));
    for i in 0..n {
        a.row_mut(i).assign(&row(n));
        b.row_mut(i).assign(&row(m));
    }
    let pi = row(n);
    HmmModel { a, b, pi }
}

fn train_from(
    mut model: HmmModel,
    sequences: &[Vec<usize>],
    max_iterations: usize,
    min_log_improvement: f64,
) -> (HmmModel, Vec<f64>) {
    let total_symbols: usize = sequences.iter().map(Vec::len).sum();
    let mut history = Vec::new();
    let mut previous = f64::NEG_INFINITY;
    for _ in 0..max_iterations {
        let mut acc = Accumulators::new(model.n_states(), model.n_symbols());
        for seq in sequences {
            accumulate_sequence(&model, seq, &mut acc);
        }
        history.push(acc.log_likelihood);
        let updated = maximization(&acc, sequences.len());
        let improvement = (acc.log_likelihood - previous) / total_symbols as f64;
        previous = acc.log_likelihood;
        model = updated;
        if improvement.abs() < min_log_improvement {
            break;
        }
    }
    (model, history)
}

/// Baum-Welch over a set of observation sequences, pooling expected counts
/// across sequences each iteration. Runs `restarts` independently seeded
/// fits and keeps the one with the highest total log-likelihood.
pub fn train_hmm(sequences: &[Vec<usize>], n_symbols: usize, config: &HmmTrainConfig) -> Result<(HmmModel, HmmTrainLog)> {
    assert!(config.n_states >= 2, "need at least 2 hidden states");
    assert!(config.restarts >= 1, "need at least 1 restart");
    if sequences.is_empty() || sequences.iter().any(Vec::is_empty) {
        return Err(Error::EmptySequence);
    }
    for seq in sequences {
        if let Some(&bad) = seq.iter().find(|&&s| s >= n_symbols) {
            return Err(Error::SymbolOutOfRange { symbol: bad, n_symbols });
        }
    }

    let runs: Vec<(usize, HmmModel, Vec<f64>)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = config.rng_seed.wrapping_add(r as u64);
            let init = initial_model(config.n_states, n_symbols, seed, r);
            let (model, history) =
                train_from(init, sequences, config.max_iterations, config.min_log_improvement);
            (r, model, history)
        })
        .collect();

    // Final log-likelihood of each run, scored on the returned model.
    let mut best: Option<(usize, f64, HmmModel, Vec<f64>)> = None;
    for (r, model, history) in runs {
        let ll: f64 = sequences.iter().map(|s| log_likelihood(&model, s).expect("validated")).sum();
        let better = match &best {
            None => true,
            Some((_, best_ll, _, _)) => ll > *best_ll,
        };
        if better {
            best = Some((r, ll, model, history));
        }
    }
    let (chosen_restart, log_lik, model, history) = best.expect("at least one restart");
    let log = HmmTrainLog {
        chosen_restart,
        iterations: history.len(),
        log_likelihood: log_lik,
        log_likelihood_per_iteration: history,
    };
    Ok((model, log))
}

/// Canonical state order: descending stationary probability, ties broken by
/// descending first emission entry, then by index. EM recovers states only
/// up to permutation; fixing the order keeps embeddings from adjacent
/// windows comparable.
pub fn canonical_state_order(model: &HmmModel) -> Vec<usize> {
    let stationary = model.stationary();
    let mut order: Vec<usize> = (0..model.n_states()).collect();
    order.sort_by(|&i, &j| {
        stationary[j]
            .partial_cmp(&stationary[i])
            .unwrap()
            .then_with(|| model.b[[j, 0]].partial_cmp(&model.b[[i, 0]]).unwrap())
            .then_with(|| i.cmp(&j))
    });
    order
}

/// Per-symbol embeddings from the emission matrix: symbol m's embedding is
/// column m of B, with rows taken in canonical state order.
pub fn hmm2vec(model: &HmmModel, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    if model.n_symbols() != vocab.len() {
        return Err(Error::EmbeddingMismatch(format!(
            "model has {} symbols, vocabulary has {}",
            model.n_symbols(),
            vocab.len()
        )));
    }
    let order = canonical_state_order(model);
    let vectors: Vec<Vec<f64>> = (0..vocab.len())
        .map(|m| order.iter().map(|&s| model.b[[s, m]]).collect())
        .collect();
    EmbeddingTable::new(EmbeddingSource::Hmm2Vec, model.n_states(), vectors)
}

/// Writes the plain-text model dump: `N M`, then the A rows, B rows, pi,
/// and finally the symbol list (for scoring raw opcode files later).
pub fn write_model_text(model: &HmmModel, symbols: &[String], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", model.n_states(), model.n_symbols()));
    for row in model.a.axis_iter(Axis(0)) {
        out.push_str(&join_row(row.iter()));
    }
    for row in model.b.axis_iter(Axis(0)) {
        out.push_str(&join_row(row.iter()));
    }
    out.push_str(&join_row(model.pi.iter()));
    out.push_str(&symbols.join(" "));
    out.push('\n');
    std::fs::write(path, out).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

fn join_row<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut line = values.map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" ");
    line.push('\n');
    line
}

/// Reads a model dump written by [`write_model_text`].
pub fn read_model_text(path: &Path) -> Result<(HmmModel, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let bad = |reason: &str| Error::ModelFormat { path: path.to_path_buf(), reason: reason.to_string() };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("missing header"))?;
    let mut parts = header.split_whitespace();
    let n: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad N"))?;
    let m: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad M"))?;
    let mut parse_row = |len: usize| -> Result<Vec<f64>> {
        let line = lines.next().ok_or_else(|| bad("missing matrix row"))?;
        let row: Vec<f64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        if row.len() != len {
            return Err(bad(&format!("expected {len} entries, got {}", row.len())));
        }
        Ok(row)
    };
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        a.row_mut(i).assign(&Array1::from(parse_row(n)?));
    }
    let mut b = Array2::zeros((n, m));
    for i in 0..n {
        b.row_mut(i).assign(&Array1::from(parse_row(m)?));
    }
    let pi = Array1::from(parse_row(n)?);
    let symbols: Vec<String> =
        lines.next().ok_or_else(|| bad("missing symbols"))?.split_whitespace().map(String::from).collect();
    if symbols.len() != m {
        return Err(bad(&format!("expected {m} symbols, got {}", symbols.len())));
    }
    Ok((HmmModel { a, b, pi }, symbols))
}
