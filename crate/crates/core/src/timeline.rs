//! Sliding-window training and the chi-squared drift series.
//!
//! Each window pair puts a year of samples in class +1 and the following
//! month in class -1, trains a linear SVM, and the series graphs the
//! chi-squared distance between adjacent windows' weight vectors. Spikes in
//! that series are candidate evolution points.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, Month};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionReport, Verdict};
use crate::features::{
    build_vocabulary, embed_sample, frequency_vector, EngineKind, FeatureVector, Vocabulary,
};
use crate::hmm::{hmm2vec, train_hmm, HmmTrainConfig};
use crate::svm::{train_linear_svm, SvmParams, WeightVector};
use crate::word2vec::{train_word2vec, SgnsParams};

/// Whether an embedding table is trained once on the whole corpus or
/// retrained inside every window's year span.
///
/// Chi-squared comparison of adjacent weight vectors needs a shared
/// coordinate system. Per-window hidden-Markov tables stay comparable
/// because the near-uniform base start settles into the data's marginal
/// fit and states are canonicalized; per-window skip-gram tables have no
/// such anchor and wander, so word2vec defaults to one global table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingScope {
    Global,
    PerWindow,
}

/// Feature engine for a run, with the engine-specific training settings.
#[derive(Debug, Clone)]
pub enum EngineConfig {
    Raw,
    Ngram { n: usize },
    Word2Vec { params: SgnsParams, scope: EmbeddingScope },
    Hmm2Vec { config: HmmTrainConfig, scope: EmbeddingScope },
}

impl EngineConfig {
    pub fn kind(&self) -> EngineKind {
        match self {
            EngineConfig::Raw => EngineKind::Raw,
            EngineConfig::Ngram { .. } => EngineKind::Ngram,
            EngineConfig::Word2Vec { .. } => EngineKind::Word2Vec,
            EngineConfig::Hmm2Vec { .. } => EngineKind::Hmm2Vec,
        }
    }

    pub fn word2vec(params: SgnsParams) -> EngineConfig {
        EngineConfig::Word2Vec { params, scope: EmbeddingScope::Global }
    }

    pub fn hmm2vec(config: HmmTrainConfig) -> EngineConfig {
        EngineConfig::Hmm2Vec { config, scope: EmbeddingScope::PerWindow }
    }

    /// Gram order of the feature vocabulary.
    pub fn gram_order(&self) -> usize {
        match self {
            EngineConfig::Ngram { n } => *n,
            _ => 1,
        }
    }

    pub fn scope(&self) -> Option<EmbeddingScope> {
        match self {
            EngineConfig::Word2Vec { scope, .. } | EngineConfig::Hmm2Vec { scope, .. } => Some(*scope),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            EngineConfig::Raw => "raw".to_string(),
            EngineConfig::Ngram { n } => format!("ngram({n})"),
            EngineConfig::Word2Vec { params, .. } => format!("word2vec({})", params.dim),
            EngineConfig::Hmm2Vec { config, .. } => format!("hmm2vec({})", config.n_states),
        }
    }
}

/// One year-versus-month training window. Sample references are indices
/// into the corpus's sorted sample list.
#[derive(Debug, Clone, Serialize)]
pub struct WindowPair {
    pub year_start: Month,
    pub year_end: Month,
    pub probe_month: Month,
    pub pos_samples: Vec<usize>,
    pub neg_samples: Vec<usize>,
    pub skip: Option<SkipReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    EmptyProbeMonth,
    EmptyYearClass,
}

/// One pair per probe month from (start + 12) to the end of the corpus.
/// Pairs with an empty class are emitted but flagged to skip; a corpus
/// shorter than 13 months cannot form a single pair.
pub fn enumerate_windows(corpus: &Corpus) -> Result<Vec<WindowPair>> {
    let (first, last) = corpus.span();
    let span = corpus.span_months();
    if span < 13 {
        return Err(Error::CorpusTooShort { months: span });
    }
    let month_of: Vec<Month> = corpus.samples().iter().map(|s| s.month()).collect();
    let mut pairs = Vec::new();
    let mut probe = first.offset(12);
    while probe <= last {
        let year_start = probe.offset(-12);
        let year_end = probe.offset(-1);
        let pos_samples: Vec<usize> =
            (0..month_of.len()).filter(|&i| month_of[i] >= year_start && month_of[i] <= year_end).collect();
        let neg_samples: Vec<usize> = (0..month_of.len()).filter(|&i| month_of[i] == probe).collect();
        let skip = if neg_samples.is_empty() {
            Some(SkipReason::EmptyProbeMonth)
        } else if pos_samples.is_empty() {
            Some(SkipReason::EmptyYearClass)
        } else {
            None
        };
        pairs.push(WindowPair { year_start, year_end, probe_month: probe, pos_samples, neg_samples, skip });
        probe = probe.offset(1);
    }
    Ok(pairs)
}

const CHI2_FLOOR: f64 = 1e-6;

/// Renders a weight vector as a comparable distribution: absolute values,
/// L1-normalized, floored at 1e-6 and renormalized so no chi-squared term
/// divides by zero. An all-zero vector becomes uniform.
pub fn weight_distribution(weights: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let sum: f64 = out.iter().sum();
    if sum <= 0.0 {
        let uniform = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|x| *x = uniform);
        return out;
    }
    out.iter_mut().for_each(|x| *x = (*x / sum).max(CHI2_FLOOR));
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Chi-squared distance between adjacent weight vectors: the previous
/// window supplies the expected distribution, the current one the observed.
pub fn chi2_distance(prev: &WeightVector, curr: &WeightVector) -> Result<f64> {
    if prev.dim() != curr.dim() {
        return Err(Error::DimensionMismatch { expected: prev.dim(), got: curr.dim() });
    }
    if prev.engine != curr.engine {
        return Err(Error::InvalidConfig(format!("mixed engines: {} vs {}", prev.engine, curr.engine)));
    }
    let expected = weight_distribution(&prev.weights);
    let observed = weight_distribution(&curr.weights);
    Ok(expected
        .iter()
        .zip(&observed)
        .map(|(e, o)| {
            let d = o - e;
            d * d / e
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub month: Month,
    pub chi2: f64,
}

/// A detected spike, its z-score against the rest of the series, and the
/// confirmation state filled in by the secondary test.
#[derive(Debug, Clone, Serialize)]
pub struct SpikeReport {
    pub month: Month,
    pub chi2: f64,
    pub zscore: f64,
    pub confirmed: Verdict,
    pub evolution: Option<EvolutionReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Chi2Series {
    pub engine: EngineKind,
    pub points: Vec<SeriesPoint>,
    pub spikes: Vec<SpikeReport>,
}

impl Chi2Series {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("month,chi2,is_spike\n");
        for p in &self.points {
            let is_spike = self.spikes.iter().any(|s| s.month == p.month);
            out.push_str(&format!("{},{},{}\n", p.month, p.chi2, is_spike));
        }
        out
    }
}

/// Per-window training diagnostics surfaced in run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct WindowSummary {
    pub probe_month: Month,
    pub pos_count: usize,
    pub neg_count: usize,
    pub skipped: Option<String>,
    /// Samples shorter than the gram order, excluded from this window.
    pub too_short: usize,
    pub svm_objective: Option<f64>,
    pub note: Option<String>,
}

pub struct SeriesOutcome {
    pub series: Chi2Series,
    pub windows: Vec<WindowSummary>,
    /// The run-global feature vocabulary (shared by every window unless
    /// per-window vocabularies were requested).
    pub vocabulary: Vocabulary,
}

#[derive(Debug, Clone)]
pub struct SeriesOptions {
    /// Top-K vocabulary size (the OTHER bucket is added on top).
    pub vocabulary_size: usize,
    pub svm: SvmParams,
    /// Rebuild the vocabulary inside each window instead of sharing one
    /// run-global coordinate system. Adjacent weight vectors then live in
    /// different coordinate systems, so this is for exploration only.
    pub per_window_vocabulary: bool,
    /// Binarize raw/ngram frequencies into presence indicators.
    pub binary_features: bool,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            vocabulary_size: 20,
            svm: SvmParams::default(),
            per_window_vocabulary: false,
            binary_features: false,
        }
    }
}

struct TrainedWindow {
    weights: Option<WeightVector>,
    summary: WindowSummary,
}

fn features_for(
    corpus: &Corpus,
    indices: &[usize],
    vocab: &Vocabulary,
    engine: &EngineConfig,
    table: Option<&crate::features::EmbeddingTable>,
    binary: bool,
    too_short: &mut usize,
) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let sample = &corpus.samples()[i];
        let built = match engine {
            EngineConfig::Raw | EngineConfig::Ngram { .. } => frequency_vector(sample, vocab, engine.kind()),
            EngineConfig::Word2Vec { .. } | EngineConfig::Hmm2Vec { .. } => {
                embed_sample(sample, vocab, table.expect("embedding engines carry a table"))
            }
        };
        match built {
            Ok(mut fv) => {
                if binary {
                    fv.values.iter_mut().for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
                }
                out.push(fv);
            }
            Err(Error::SampleTooShort { .. }) => *too_short += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn train_window(
    corpus: &Corpus,
    pair: &WindowPair,
    vocab: &Vocabulary,
    engine: &EngineConfig,
    shared_table: Option<&crate::features::EmbeddingTable>,
    opts: &SeriesOptions,
) -> Result<TrainedWindow> {
    let mut summary = WindowSummary {
        probe_month: pair.probe_month,
        pos_count: pair.pos_samples.len(),
        neg_count: pair.neg_samples.len(),
        skipped: None,
        too_short: 0,
        svm_objective: None,
        note: None,
    };
    if let Some(reason) = pair.skip {
        summary.skipped = Some(format!("{reason:?}"));
        return Ok(TrainedWindow { weights: None, summary });
    }

    // Per-window vocabulary mode rebuilds coordinates from the window's own
    // samples (year span plus probe month).
    let window_vocab;
    let vocab = if opts.per_window_vocabulary {
        let members: Vec<_> =
            pair.pos_samples.iter().chain(&pair.neg_samples).map(|&i| corpus.samples()[i].clone()).collect();
        window_vocab = build_vocabulary(&members, opts.vocabulary_size, engine.gram_order())?;
        &window_vocab
    } else {
        vocab
    };

    // In per-window scope, embedding engines train on the pair's year span.
    let table = match (engine, shared_table) {
        (_, Some(table)) => Some(table.clone()),
        (EngineConfig::Word2Vec { params, .. }, None) => {
            let year: Vec<_> = pair.pos_samples.iter().map(|&i| corpus.samples()[i].clone()).collect();
            let outcome = train_word2vec(&year, vocab, params)?;
            summary.note = outcome
                .degenerate_corpus
                .then(|| "word2vec trained on a degenerate (single-token) window".to_string());
            Some(outcome.table)
        }
        (EngineConfig::Hmm2Vec { config, .. }, None) => {
            let sequences: Vec<Vec<usize>> =
                pair.pos_samples.iter().map(|&i| vocab.encode(&corpus.samples()[i])).collect();
            let (model, log) = train_hmm(&sequences, vocab.len(), config)?;
            summary.note = Some(format!(
                "hmm2vec window model: {} iterations, restart {}",
                log.iterations, log.chosen_restart
            ));
            Some(hmm2vec(&model, vocab)?)
        }
        _ => None,
    };

    let mut too_short = 0;
    let positives =
        features_for(corpus, &pair.pos_samples, vocab, engine, table.as_ref(), opts.binary_features, &mut too_short)?;
    let negatives =
        features_for(corpus, &pair.neg_samples, vocab, engine, table.as_ref(), opts.binary_features, &mut too_short)?;
    summary.too_short = too_short;

    match train_linear_svm(&positives, &negatives, &opts.svm, pair.probe_month) {
        Ok(weights) => {
            summary.svm_objective = Some(weights.final_objective);
            Ok(TrainedWindow { weights: Some(weights), summary })
        }
        // A class emptied by the too-short filter skips the window.
        Err(Error::EmptyClass { class, .. }) => {
            summary.skipped = Some(format!("class {class} empty after length filtering"));
            Ok(TrainedWindow { weights: None, summary })
        }
        Err(e) => Err(e),
    }
}

/// Trains one SVM per usable window and assembles the chi-squared series.
///
/// The point at month m compares the weight vectors of the windows probing
/// m and the nearest earlier usable probe month (normally m - 1; skipped
/// months leave a gap the comparison spans).
pub fn build_series(corpus: &Corpus, engine: &EngineConfig, opts: &SeriesOptions) -> Result<SeriesOutcome> {
    let pairs = enumerate_windows(corpus)?;
    let vocabulary = build_vocabulary(corpus.samples(), opts.vocabulary_size, engine.gram_order())?;

    // Global-scope embedding engines train one table on the whole corpus.
    let shared_table = match engine {
        EngineConfig::Word2Vec { params, scope: EmbeddingScope::Global } => {
            if opts.per_window_vocabulary {
                return Err(Error::InvalidConfig(
                    "per-window vocabularies cannot index a global embedding table".into(),
                ));
            }
            Some(train_word2vec(corpus.samples(), &vocabulary, params)?.table)
        }
        EngineConfig::Hmm2Vec { config, scope: EmbeddingScope::Global } => {
            if opts.per_window_vocabulary {
                return Err(Error::InvalidConfig(
                    "per-window vocabularies cannot index a global embedding table".into(),
                ));
            }
            let sequences: Vec<Vec<usize>> =
                corpus.samples().iter().map(|s| vocabulary.encode(s)).collect();
            let (model, _) = train_hmm(&sequences, vocabulary.len(), config)?;
            Some(hmm2vec(&model, &vocabulary)?)
        }
        _ => None,
    };

    let trained: Vec<Result<TrainedWindow>> = pairs
        .par_iter()
        .map(|pair| train_window(corpus, pair, &vocabulary, engine, shared_table.as_ref(), opts))
        .collect();

    let mut windows = Vec::with_capacity(pairs.len());
    let mut weights: Vec<Option<WeightVector>> = Vec::with_capacity(pairs.len());
    for result in trained {
        let t = result?;
        windows.push(t.summary);
        weights.push(t.weights);
    }

    let mut points = Vec::new();
    let mut previous: Option<&WeightVector> = None;
    for w in &weights {
        let Some(current) = w else { continue };
        if let Some(prev) = previous {
            points.push(SeriesPoint { month: current.window_id, chi2: chi2_distance(prev, current)? });
        }
        previous = Some(current);
    }
    if points.len() < 3 {
        return Err(Error::SeriesTooShort { points: points.len() });
    }

    let series = Chi2Series { engine: engine.kind(), points, spikes: Vec::new() };
    Ok(SeriesOutcome { series, windows, vocabulary })
}

/// Flags points whose z-score against the mean and standard deviation of
/// all other points exceeds the threshold. A spike at the final point is
/// untestable: no samples exist after it to train the confirming model on.
pub fn detect_spikes(points: &[SeriesPoint], z_threshold: f64) -> Result<Vec<SpikeReport>> {
    if points.len() < 3 {
        return Err(Error::SeriesTooShort { points: points.len() });
    }
    let mut spikes = Vec::new();
    for (i, point) in points.iter().enumerate() {
        let others: Vec<f64> =
            points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| p.chi2).collect();
        let mean = others.iter().sum::<f64>() / others.len() as f64;
        let variance =
            others.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (others.len() - 1) as f64;
        let std = variance.sqrt();
        let zscore = if std > 0.0 {
            (point.chi2 - mean) / std
        } else if point.chi2 > mean {
            f64::INFINITY
        } else {
            0.0
        };
        if zscore > z_threshold {
            spikes.push(SpikeReport {
                month: point.month,
                chi2: point.chi2,
                zscore,
                confirmed: Verdict::Untestable,
                evolution: None,
            });
        }
    }
    Ok(spikes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Corpus, Sample, SynthSpec};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn sample_at(id: &str, y: i32, m: u32) -> Sample {
        Sample {
            id: id.into(),
            family: "f".into(),
            created: NaiveDate::from_ymd_opt(y, m, 15).unwrap(),
            opcodes: vec!["mov".into(), "add".into()],
        }
    }

    fn monthly_corpus(start: (i32, u32), months: u32) -> Corpus {
        let mut samples = Vec::new();
        let first = Month::new(start.0, start.1);
        for i in 0..months {
            let m = first.offset(i as i32);
            samples.push(sample_at(&format!("s{i}"), m.year(), m.month()));
        }
        Corpus::from_samples("f", samples).unwrap()
    }

    #[test]
    fn windows_match_the_reference_layout() {
        // Jan 2011 .. Mar 2012 must give exactly three pairs:
        //   Jan 2011-Dec 2011 | Jan 2012
        //   Feb 2011-Jan 2012 | Feb 2012
        //   Mar 2011-Feb 2012 | Mar 2012
        let corpus = monthly_corpus((2011, 1), 15);
        let pairs = enumerate_windows(&corpus).unwrap();
        assert_eq!(pairs.len(), 3);
        let expect = [
            ((2011, 1), (2011, 12), (2012, 1)),
            ((2011, 2), (2012, 1), (2012, 2)),
            ((2011, 3), (2012, 2), (2012, 3)),
        ];
        for (pair, (ys, ye, p)) in pairs.iter().zip(expect) {
            assert_eq!(pair.year_start, Month::new(ys.0, ys.1));
            assert_eq!(pair.year_end, Month::new(ye.0, ye.1));
            assert_eq!(pair.probe_month, Month::new(p.0, p.1));
            assert!(pair.skip.is_none());
            assert_eq!(pair.pos_samples.len(), 12);
            assert_eq!(pair.neg_samples.len(), 1);
        }
    }

    #[test]
    fn twelve_month_corpus_is_too_short() {
        let corpus = monthly_corpus((2011, 1), 12);
        assert!(matches!(enumerate_windows(&corpus), Err(Error::CorpusTooShort { months: 12 })));
    }

    #[test]
    fn empty_probe_month_is_flagged_skip() {
        let mut samples = Vec::new();
        let first = Month::new(2011, 1);
        for i in 0..15 {
            if i == 13 {
                continue; // no samples in the 14th month
            }
            let m = first.offset(i);
            samples.push(sample_at(&format!("s{i}"), m.year(), m.month()));
        }
        let corpus = Corpus::from_samples("f", samples).unwrap();
        let pairs = enumerate_windows(&corpus).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[1].skip, Some(SkipReason::EmptyProbeMonth));
        assert!(pairs[0].skip.is_none());
        assert!(pairs[2].skip.is_none());
    }

    fn wv(weights: Vec<f64>) -> WeightVector {
        WeightVector {
            weights,
            bias: 0.0,
            window_id: Month::new(2015, 6),
            engine: EngineKind::Raw,
            objective_trace: vec![],
            final_objective: 0.0,
        }
    }

    #[test]
    fn chi2_of_identical_vectors_is_zero() {
        let w = wv(vec![0.3, -0.2, 0.5]);
        assert_eq!(chi2_distance(&w, &w).unwrap(), 0.0);
    }

    #[test]
    fn chi2_matches_hand_computation() {
        // Transformed: e = (0.25, 0.75), o = (0.5, 0.5)
        // 0.25^2/0.25 + 0.25^2/0.75 = 1/3
        let prev = wv(vec![0.25, 0.75]);
        let curr = wv(vec![0.5, 0.5]);
        let chi2 = chi2_distance(&prev, &curr).unwrap();
        assert!((chi2 - 1.0 / 3.0).abs() < 1e-9, "chi2={chi2}");
    }

    #[test]
    fn chi2_is_blind_to_a_pure_sign_flip() {
        let prev = wv(vec![0.4, -0.6]);
        let curr = wv(vec![-0.4, 0.6]);
        assert_eq!(chi2_distance(&prev, &curr).unwrap(), 0.0);
    }

    #[test]
    fn chi2_rejects_dimension_mismatch() {
        let err = chi2_distance(&wv(vec![1.0]), &wv(vec![1.0, 2.0]));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_weight_vector_becomes_uniform() {
        let d = weight_distribution(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d, vec![0.25; 4]);
    }

    proptest! {
        /// Scaling both weight vectors by positive constants cannot change
        /// the distance: the L1 normalization quotients scale out.
        #[test]
        fn chi2_invariant_under_positive_scaling(
            w in proptest::collection::vec(-5.0f64..5.0, 2..12),
            v_seed in proptest::collection::vec(-5.0f64..5.0, 2..12),
            c1 in 0.01f64..100.0,
            c2 in 0.01f64..100.0,
        ) {
            let v: Vec<f64> = v_seed.iter().cycle().take(w.len()).copied().collect();
            let base = chi2_distance(&wv(w.clone()), &wv(v.clone())).unwrap();
            let scaled = chi2_distance(
                &wv(w.iter().map(|x| c1 * x).collect()),
                &wv(v.iter().map(|x| c2 * x).collect()),
            ).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9 * base.max(1.0));
        }
    }

    #[test]
    fn spike_detection_finds_the_single_outlier() {
        let points: Vec<SeriesPoint> = [1.0, 1.0, 1.0, 10.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &chi2)| SeriesPoint { month: Month::new(2015, 1).offset(i as i32), chi2 })
            .collect();
        let spikes = detect_spikes(&points, 2.0).unwrap();
        assert_eq!(spikes.len(), 1);
        assert_eq!(spikes[0].month, Month::new(2015, 4));
        assert!(spikes[0].zscore > 2.0);
    }

    #[test]
    fn constant_series_has_no_spikes() {
        let points: Vec<SeriesPoint> =
            (0..6).map(|i| SeriesPoint { month: Month::new(2015, 1).offset(i), chi2: 0.7 }).collect();
        assert!(detect_spikes(&points, 2.0).unwrap().is_empty());
    }

    #[test]
    fn spike_detection_needs_three_points() {
        let points: Vec<SeriesPoint> =
            (0..2).map(|i| SeriesPoint { month: Month::new(2015, 1).offset(i), chi2: 1.0 }).collect();
        assert!(matches!(detect_spikes(&points, 2.0), Err(Error::SeriesTooShort { points: 2 })));
    }

    fn planted_spec(seed: u64, evolution_month: Option<u32>) -> SynthSpec {
        SynthSpec::benchmark(24, 12, 10, evolution_month, 1.0, seed)
    }

    #[test]
    fn planted_change_peaks_the_series_next_to_the_boundary() {
        let corpus = generate_synthetic(&planted_spec(41, Some(12))).unwrap();
        let opts = SeriesOptions { vocabulary_size: 10, ..Default::default() };
        let outcome = build_series(&corpus, &EngineConfig::Raw, &opts).unwrap();
        let max =
            outcome.series.points.iter().max_by(|a, b| a.chi2.partial_cmp(&b.chi2).unwrap()).unwrap();
        // The new regime starts at month index 13; the peak belongs within
        // one month of the boundary.
        let peak_index = max.month.since(Month::new(2015, 1));
        assert!((12..=14).contains(&peak_index), "peak at index {peak_index}");
    }

    #[test]
    fn series_is_deterministic() {
        let corpus = generate_synthetic(&planted_spec(7, Some(12))).unwrap();
        let opts = SeriesOptions { vocabulary_size: 10, ..Default::default() };
        let a = build_series(&corpus, &EngineConfig::Raw, &opts).unwrap();
        let b = build_series(&corpus, &EngineConfig::Raw, &opts).unwrap();
        assert_eq!(a.series.points, b.series.points);
    }

    #[test]
    fn series_months_strictly_increase() {
        let corpus = generate_synthetic(&planted_spec(3, None)).unwrap();
        let opts = SeriesOptions { vocabulary_size: 10, ..Default::default() };
        let outcome = build_series(&corpus, &EngineConfig::Raw, &opts).unwrap();
        for pair in outcome.series.points.windows(2) {
            assert!(pair[1].month > pair[0].month);
        }
    }
}
