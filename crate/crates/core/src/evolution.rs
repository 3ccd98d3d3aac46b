//! Secondary confirmation test for a chi-squared spike.
//!
//! Trains one HMM on the samples before the spike month and one on the
//! samples from it onward, scores every sample under both models, and
//! summarizes the cross-model score gap as the evolution score E. A real
//! evolution point leaves each side's samples scoring clearly higher under
//! their own side's model.

use serde::Serialize;

use crate::corpus::{Corpus, Month, Sample};
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::hmm::{score_llpo, train_hmm, HmmModel, HmmTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Confirmed,
    Rejected,
    Untestable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Confirmed => "confirmed",
            Verdict::Rejected => "rejected",
            Verdict::Untestable => "untestable",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Before,
    After,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Before => "before",
            Side::After => "after",
        })
    }
}

/// LLPO of one sample under both side models.
#[derive(Debug, Clone, Serialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub side: Side,
    pub llpo_before_model: f64,
    pub llpo_after_model: f64,
}

impl SampleScore {
    /// Score under the model trained on this sample's own side.
    pub fn correct(&self) -> f64 {
        match self.side {
            Side::Before => self.llpo_before_model,
            Side::After => self.llpo_after_model,
        }
    }

    /// Score under the opposite side's model.
    pub fn cross(&self) -> f64 {
        match self.side {
            Side::Before => self.llpo_after_model,
            Side::After => self.llpo_before_model,
        }
    }
}

/// Training facts for one side's model, kept for run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct SideModelMeta {
    pub samples: usize,
    pub n_states: usize,
    pub rng_seed: u64,
    pub iterations: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionReport {
    pub spike_month: Month,
    pub before_model: SideModelMeta,
    pub after_model: SideModelMeta,
    pub scores: Vec<SampleScore>,
    pub e_before: f64,
    pub e_after: f64,
    pub e: f64,
    pub verdict: Verdict,
}

impl EvolutionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,side,llpo_before_model,llpo_after_model\n");
        for s in &self.scores {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.sample_id, s.side, s.llpo_before_model, s.llpo_after_model
            ));
        }
        out
    }
}

/// Result of attempting the secondary test at a spike month.
pub enum SecondaryOutcome {
    /// Too few samples on one side to train a meaningful model.
    Untestable { before_samples: usize, after_samples: usize },
    Tested {
        report: EvolutionReport,
        before_model: HmmModel,
        after_model: HmmModel,
    },
}

#[derive(Debug, Clone)]
pub struct SecondaryTestOptions {
    /// Months of history used on each side of the spike.
    pub window_months: u32,
    /// Minimum samples per side; below this the spike is untestable.
    pub min_samples: usize,
    /// Confirmation threshold on the evolution score E.
    pub e_threshold: f64,
    pub hmm: HmmTrainConfig,
    /// Compute E on raw signed scores instead of magnitudes (comparison
    /// mode; raw LLPO scores are negative, so E can go negative too).
    pub raw_scores: bool,
}

impl Default for SecondaryTestOptions {
    fn default() -> Self {
        SecondaryTestOptions {
            window_months: 12,
            min_samples: 10,
            e_threshold: 0.5,
            hmm: HmmTrainConfig::default(),
            raw_scores: false,
        }
    }
}

const SCORE_FLOOR: f64 = 1e-12;

/// Evolution score over magnitudes:
/// E = (1/n) sum (|cross_i| - |correct_i|)^2 / |correct_i|.
/// Zero iff the magnitudes agree pairwise; invariant under duplicating the
/// sample list (the 1/n keeps corpora of different sizes comparable).
pub fn evolution_score(correct: &[f64], cross: &[f64]) -> Result<f64> {
    if correct.len() != cross.len() || correct.is_empty() {
        return Err(Error::ScoreLengthMismatch { correct: correct.len(), cross: cross.len() });
    }
    let total: f64 = correct
        .iter()
        .zip(cross)
        .map(|(s, c)| {
            let s = s.abs().max(SCORE_FLOOR);
            let d = c.abs() - s;
            d * d / s
        })
        .sum();
    Ok(total / correct.len() as f64)
}

/// Signed variant: E = (1/n) sum (cross_i - correct_i)^2 / correct_i.
/// With negative LLPO scores the terms are negative; exposed only for
/// comparison against the magnitude form.
pub fn evolution_score_signed(correct: &[f64], cross: &[f64]) -> Result<f64> {
    if correct.len() != cross.len() || correct.is_empty() {
        return Err(Error::ScoreLengthMismatch { correct: correct.len(), cross: cross.len() });
    }
    let total: f64 = correct
        .iter()
        .zip(cross)
        .map(|(s, c)| {
            let denom = if s.abs() < SCORE_FLOOR { SCORE_FLOOR.copysign(*s) } else { *s };
            let d = c - s;
            d * d / denom
        })
        .sum();
    Ok(total / correct.len() as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Trains the two side models and cross-scores every sample within
/// `window_months` of the spike. The verdict is confirmed when E clears the
/// threshold and each side's own model outscores the cross model on
/// average.
pub fn secondary_test(
    corpus: &Corpus,
    vocab: &Vocabulary,
    spike_month: Month,
    opts: &SecondaryTestOptions,
) -> Result<SecondaryOutcome> {
    let window = opts.window_months as i32;
    let before: Vec<&Sample> =
        corpus.samples_in(spike_month.offset(-window), spike_month.offset(-1)).collect();
    let after: Vec<&Sample> = corpus.samples_in(spike_month, spike_month.offset(window - 1)).collect();
    if before.len() < opts.min_samples || after.len() < opts.min_samples {
        return Ok(SecondaryOutcome::Untestable {
            before_samples: before.len(),
            after_samples: after.len(),
        });
    }

    let encode = |side: &[&Sample]| -> Vec<Vec<usize>> { side.iter().map(|s| vocab.encode(s)).collect() };
    let before_seqs = encode(&before);
    let after_seqs = encode(&after);

    // Distinct seeds keep the two trainings independent while the whole
    // test stays a pure function of (corpus, options).
    let before_config = opts.hmm.clone();
    let after_config =
        HmmTrainConfig { rng_seed: opts.hmm.rng_seed.wrapping_add(0x9e37_79b9), ..opts.hmm.clone() };
    let (before_model, before_log) = train_hmm(&before_seqs, vocab.len(), &before_config)?;
    let (after_model, after_log) = train_hmm(&after_seqs, vocab.len(), &after_config)?;

    let mut scores = Vec::with_capacity(before.len() + after.len());
    for (side, side_samples, side_seqs) in
        [(Side::Before, &before, &before_seqs), (Side::After, &after, &after_seqs)]
    {
        for (sample, seq) in side_samples.iter().zip(side_seqs) {
            scores.push(SampleScore {
                sample_id: sample.id.clone(),
                side,
                llpo_before_model: score_llpo(&before_model, seq)?,
                llpo_after_model: score_llpo(&after_model, seq)?,
            });
        }
    }

    let score_e = if opts.raw_scores { evolution_score_signed } else { evolution_score };
    let side_scores = |side: Side| -> (Vec<f64>, Vec<f64>) {
        scores.iter().filter(|s| s.side == side).map(|s| (s.correct(), s.cross())).unzip()
    };
    let (before_correct, before_cross) = side_scores(Side::Before);
    let (after_correct, after_cross) = side_scores(Side::After);
    let e_before = score_e(&before_correct, &before_cross)?;
    let e_after = score_e(&after_correct, &after_cross)?;
    let e = (e_before + e_after) / 2.0;

    let separated =
        mean(&before_correct) > mean(&before_cross) && mean(&after_correct) > mean(&after_cross);
    let verdict = if e >= opts.e_threshold && separated { Verdict::Confirmed } else { Verdict::Rejected };

    let report = EvolutionReport {
        spike_month,
        before_model: SideModelMeta {
            samples: before.len(),
            n_states: before_config.n_states,
            rng_seed: before_config.rng_seed,
            iterations: before_log.iterations,
            log_likelihood: before_log.log_likelihood,
        },
        after_model: SideModelMeta {
            samples: after.len(),
            n_states: after_config.n_states,
            rng_seed: after_config.rng_seed,
            iterations: after_log.iterations,
            log_likelihood: after_log.log_likelihood,
        },
        scores,
        e_before,
        e_after,
        e,
        verdict,
    };
    Ok(SecondaryOutcome::Tested { report, before_model, after_model })
}
