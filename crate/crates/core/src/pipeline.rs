//! Full-run orchestration: corpus in, reports and plots out.
//!
//! A run loads or synthesizes a corpus, builds the chi-squared series under
//! one feature engine, detects spikes, runs the secondary HMM test on each
//! testable spike, and writes every artifact (CSV, SVG, model dumps, run
//! metadata) into the output directory. Deterministic for a fixed seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::corpus::{generate_synthetic, load_corpus, DateBounds, LoadReport, SynthSpec};
use crate::error::{Error, Result};
use crate::evolution::{secondary_test, SecondaryOutcome, SecondaryTestOptions, Verdict};
use crate::features::build_vocabulary;
use crate::hmm::{write_model_text, HmmTrainConfig};
use crate::svg::{evolution_chart, series_chart};
use crate::svm::SvmParams;
use crate::timeline::{build_series, detect_spikes, EmbeddingScope, EngineConfig, SeriesOptions, SpikeReport};
use crate::word2vec::SgnsParams;

/// Resolved configuration for one pipeline run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Exactly one of manifest / synth supplies the corpus.
    pub manifest: Option<PathBuf>,
    pub synth: Option<PathBuf>,
    pub engine: EngineConfig,
    pub vocabulary_size: usize,
    pub svm: SvmParams,
    pub sgns: SgnsParams,
    pub hmm: HmmTrainConfig,
    pub z_threshold: f64,
    pub e_threshold: f64,
    pub window_months: u32,
    pub min_samples: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub per_window_vocabulary: bool,
    pub binary_features: bool,
    pub raw_evolution_scores: bool,
    /// Overrides the engine's default embedding scope (word2vec: global,
    /// hmm2vec: per-window).
    pub embedding_scope: Option<EmbeddingScope>,
    pub min_date_year: i32,
    pub max_date_year: Option<i32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            synth: None,
            engine: EngineConfig::Raw,
            vocabulary_size: 20,
            svm: SvmParams::default(),
            sgns: SgnsParams::default(),
            hmm: HmmTrainConfig::default(),
            z_threshold: 2.0,
            e_threshold: 0.5,
            window_months: 12,
            min_samples: 10,
            out_dir: PathBuf::from("out"),
            seed: 1,
            threads: None,
            per_window_vocabulary: false,
            binary_features: false,
            raw_evolution_scores: false,
            embedding_scope: None,
            min_date_year: 1990,
            max_date_year: None,
        }
    }
}

/// Parses an engine label: `raw`, `ngram(N)`, `word2vec(D)`, `hmm2vec(N)`.
pub fn parse_engine(label: &str) -> Result<EngineConfig> {
    let label = label.trim();
    if label == "raw" {
        return Ok(EngineConfig::Raw);
    }
    let parse_arg = |name: &str| -> Option<usize> {
        label
            .strip_prefix(name)?
            .strip_prefix('(')?
            .strip_suffix(')')?
            .trim()
            .parse()
            .ok()
    };
    if let Some(n) = parse_arg("ngram") {
        if n < 2 {
            return Err(Error::InvalidConfig("ngram order must be >= 2 (use `raw` for unigrams)".into()));
        }
        return Ok(EngineConfig::Ngram { n });
    }
    if let Some(d) = parse_arg("word2vec") {
        if d < 1 {
            return Err(Error::InvalidConfig("word2vec dimension must be >= 1".into()));
        }
        return Ok(EngineConfig::word2vec(SgnsParams { dim: d, ..Default::default() }));
    }
    if let Some(n) = parse_arg("hmm2vec") {
        if n < 2 {
            return Err(Error::InvalidConfig("hmm2vec needs >= 2 hidden states".into()));
        }
        return Ok(EngineConfig::hmm2vec(HmmTrainConfig { n_states: n, ..Default::default() }));
    }
    Err(Error::InvalidConfig(format!(
        "unknown engine {label:?}; expected raw, ngram(N), word2vec(D) or hmm2vec(N)"
    )))
}

/// Parses the flat `key = value` configuration format. `#`-prefixed lines
/// are comments; unknown keys are an error so typos do not silently fall
/// back to defaults.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1)));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    /// Builds a config from flat key = value pairs (file contents merged
    /// with command-line overrides).
    pub fn from_key_values(map: &BTreeMap<String, String>) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let bad = |key: &str, value: &str| Error::InvalidConfig(format!("bad value for {key}: {value:?}"));
        for (key, value) in map {
            match key.as_str() {
                "manifest" => config.manifest = Some(PathBuf::from(value)),
                "synth" => config.synth = Some(PathBuf::from(value)),
                "engine" => config.engine = parse_engine(value)?,
                "k" => config.vocabulary_size = value.parse().map_err(|_| bad(key, value))?,
                "svm_lambda" => config.svm.lambda = value.parse().map_err(|_| bad(key, value))?,
                "svm_epochs" => config.svm.epochs = value.parse().map_err(|_| bad(key, value))?,
                "svm_class_balance" => config.svm.class_balance = value.parse().map_err(|_| bad(key, value))?,
                "sgns_context_window" => config.sgns.context_window = value.parse().map_err(|_| bad(key, value))?,
                "sgns_negatives" => config.sgns.negatives = value.parse().map_err(|_| bad(key, value))?,
                "sgns_epochs" => config.sgns.epochs = value.parse().map_err(|_| bad(key, value))?,
                "sgns_learning_rate" => config.sgns.learning_rate = value.parse().map_err(|_| bad(key, value))?,
                "sgns_subsample_threshold" => {
                    config.sgns.subsample_threshold = value.parse().map_err(|_| bad(key, value))?
                }
                "hmm_max_iterations" => config.hmm.max_iterations = value.parse().map_err(|_| bad(key, value))?,
                "hmm_min_log_improvement" => {
                    config.hmm.min_log_improvement = value.parse().map_err(|_| bad(key, value))?
                }
                "hmm_restarts" => config.hmm.restarts = value.parse().map_err(|_| bad(key, value))?,
                "z_threshold" => config.z_threshold = value.parse().map_err(|_| bad(key, value))?,
                "e_threshold" => config.e_threshold = value.parse().map_err(|_| bad(key, value))?,
                "window_months" => config.window_months = value.parse().map_err(|_| bad(key, value))?,
                "min_samples" => config.min_samples = value.parse().map_err(|_| bad(key, value))?,
                "out_dir" => config.out_dir = PathBuf::from(value),
                "seed" => config.seed = value.parse().map_err(|_| bad(key, value))?,
                "threads" => config.threads = Some(value.parse().map_err(|_| bad(key, value))?),
                "per_window_vocabulary" => {
                    config.per_window_vocabulary = value.parse().map_err(|_| bad(key, value))?
                }
                "binary_features" => config.binary_features = value.parse().map_err(|_| bad(key, value))?,
                "raw_evolution_scores" => {
                    config.raw_evolution_scores = value.parse().map_err(|_| bad(key, value))?
                }
                "embedding_scope" => {
                    config.embedding_scope = Some(match value.as_str() {
                        "global" => EmbeddingScope::Global,
                        "window" => EmbeddingScope::PerWindow,
                        _ => return Err(bad(key, value)),
                    })
                }
                "min_date_year" => config.min_date_year = value.parse().map_err(|_| bad(key, value))?,
                "max_date_year" => config.max_date_year = Some(value.parse().map_err(|_| bad(key, value))?),
                _ => return Err(Error::InvalidConfig(format!("unknown configuration key {key:?}"))),
            }
        }
        if !map.contains_key("svm_lambda") {
            config.svm.lambda = crate::svm::default_lambda(config.engine.kind());
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.manifest, &self.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig("manifest and synth are mutually exclusive".into()))
            }
            (None, None) => return Err(Error::InvalidConfig("one corpus source required: manifest or synth".into())),
            _ => {}
        }
        if self.vocabulary_size < 1 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.svm.lambda <= 0.0 || self.svm.epochs == 0 {
            return Err(Error::InvalidConfig("svm_lambda must be positive and svm_epochs >= 1".into()));
        }
        if self.window_months == 0 {
            return Err(Error::InvalidConfig("window_months must be >= 1".into()));
        }
        Ok(())
    }

    /// Seeds for the individual trainers, derived from the master seed.
    /// Every window shares the same trainer seeds: identical initialization
    /// keeps adjacent windows' models in comparable coordinate bases.
    fn derived_seeds(&self) -> DerivedSeeds {
        DerivedSeeds { svm: self.seed.wrapping_add(1), sgns: self.seed.wrapping_add(2), hmm: self.seed.wrapping_add(3) }
    }

    fn date_bounds(&self) -> DateBounds {
        let mut bounds = DateBounds::default();
        bounds.min = chrono::NaiveDate::from_ymd_opt(self.min_date_year, 1, 1).unwrap_or(bounds.min);
        if let Some(y) = self.max_date_year {
            bounds.max_year = y;
        }
        bounds
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct DerivedSeeds {
    svm: u64,
    sgns: u64,
    hmm: u64,
}

/// What a run produced, for callers that want to inspect results in-process.
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub family: String,
    pub load_report: Option<LoadReport>,
    pub series_csv: PathBuf,
    pub spikes: Vec<SpikeReport>,
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    files.push(path.to_path_buf());
    Ok(())
}

/// Runs the whole pipeline. Validates the configuration before touching the
/// output directory, so an invalid run writes nothing.
pub fn run_pipeline(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;

    // One worker pool for the run; size is configurable, default the
    // machine's parallelism. Falls back to the global pool if a pool was
    // already installed for this process.
    let pool = config.threads.map(|threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| {
            Error::InvalidConfig(format!("cannot build a {threads}-thread worker pool: {e}"))
        })
    });
    match pool {
        Some(Ok(pool)) => pool.install(|| run_inner(config)),
        Some(Err(e)) => Err(e),
        None => run_inner(config),
    }
}

fn run_inner(config: &RunConfig) -> Result<RunArtifacts> {
    let seeds = config.derived_seeds();

    let (corpus, load_report, synth_spec) = match (&config.manifest, &config.synth) {
        (Some(manifest), None) => {
            let (corpus, report) = load_corpus(manifest, &config.date_bounds())?;
            (corpus, Some(report), None)
        }
        (None, Some(synth)) => {
            let spec = SynthSpec::from_json_file(synth)?;
            (generate_synthetic(&spec)?, None, Some(spec))
        }
        _ => unreachable!("validated"),
    };

    let mut engine = config.engine.clone();
    match &mut engine {
        EngineConfig::Word2Vec { params, scope } => {
            let dim = params.dim;
            *params = SgnsParams { dim, rng_seed: seeds.sgns, ..config.sgns.clone() };
            if let Some(requested) = config.embedding_scope {
                *scope = requested;
            }
        }
        EngineConfig::Hmm2Vec { config: hmm, scope } => {
            let n_states = hmm.n_states;
            *hmm = HmmTrainConfig { n_states, rng_seed: seeds.hmm, ..config.hmm.clone() };
            if let Some(requested) = config.embedding_scope {
                *scope = requested;
            }
        }
        _ => {}
    }
    let series_opts = SeriesOptions {
        vocabulary_size: config.vocabulary_size,
        svm: SvmParams { rng_seed: seeds.svm, ..config.svm.clone() },
        per_window_vocabulary: config.per_window_vocabulary,
        binary_features: config.binary_features,
    };

    let outcome = build_series(&corpus, &engine, &series_opts)?;
    let mut series = outcome.series;
    let mut spikes = detect_spikes(&series.points, config.z_threshold)?;

    // The secondary test always scores plain opcode sequences, whatever
    // features the SVMs saw; n-gram engines get a unigram vocabulary here.
    let hmm_vocab = if engine.gram_order() == 1 {
        outcome.vocabulary.clone()
    } else {
        build_vocabulary(corpus.samples(), config.vocabulary_size, 1)?
    };
    let secondary_opts = SecondaryTestOptions {
        window_months: config.window_months,
        min_samples: config.min_samples,
        e_threshold: config.e_threshold,
        hmm: HmmTrainConfig { rng_seed: seeds.hmm, ..config.hmm.clone() },
        raw_scores: config.raw_evolution_scores,
    };

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(format!("create {}", config.out_dir.display()), e))?;
    let mut files = Vec::new();
    let out = |name: &str| config.out_dir.join(name);

    let last_month = series.points.last().map(|p| p.month);
    let mut side_models = Vec::new();
    for spike in &mut spikes {
        // The endpoint has no after-side data to train on.
        if Some(spike.month) == last_month {
            spike.confirmed = Verdict::Untestable;
            continue;
        }
        match secondary_test(&corpus, &hmm_vocab, spike.month, &secondary_opts)? {
            SecondaryOutcome::Untestable { .. } => spike.confirmed = Verdict::Untestable,
            SecondaryOutcome::Tested { report, before_model, after_model } => {
                spike.confirmed = report.verdict;
                side_models.push((spike.month, before_model, after_model));
                spike.evolution = Some(report);
            }
        }
    }
    series.spikes = spikes.clone();

    write_file(&out("vocabulary.txt"), &outcome.vocabulary.to_text(), &mut files)?;
    write_file(&out("series.csv"), &series.to_csv(), &mut files)?;
    write_file(&out("series.svg"), &series_chart(&series, corpus.family(), &engine.label()), &mut files)?;

    let mut spikes_csv = String::from("month,chi2,zscore,confirmed,evolution_score\n");
    for spike in &spikes {
        let e = spike.evolution.as_ref().map(|r| r.e.to_string()).unwrap_or_default();
        spikes_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            spike.month, spike.chi2, spike.zscore, spike.confirmed, e
        ));
    }
    write_file(&out("spikes.csv"), &spikes_csv, &mut files)?;

    for spike in &spikes {
        let Some(report) = &spike.evolution else { continue };
        write_file(&out(&format!("evolution_{}.csv", spike.month)), &report.to_csv(), &mut files)?;
        write_file(&out(&format!("evolution_{}.svg", spike.month)), &evolution_chart(report, corpus.family()), &mut files)?;
    }
    for (month, before_model, after_model) in &side_models {
        for (tag, model) in [("before", before_model), ("after", after_model)] {
            let path = out(&format!("evolution_{month}_{tag}.hmm"));
            write_model_text(model, hmm_vocab.symbols(), &path)?;
            files.push(path);
        }
    }

    let metadata = json!({
        "family": corpus.family(),
        "corpus": {
            "samples": corpus.samples().len(),
            "span": [corpus.span().0.to_string(), corpus.span().1.to_string()],
            "source": config.manifest.as_ref().map(|p| p.display().to_string()),
            "synth_spec": synth_spec,
            "load_report": load_report,
        },
        "engine": engine.label(),
        "embedding_scope": engine.scope(),
        "settings": {
            "k": config.vocabulary_size,
            "svm": series_opts.svm,
            "sgns": config.sgns,
            "hmm": secondary_opts.hmm,
            "z_threshold": config.z_threshold,
            "e_threshold": config.e_threshold,
            "window_months": config.window_months,
            "min_samples": config.min_samples,
            "per_window_vocabulary": config.per_window_vocabulary,
            "binary_features": config.binary_features,
            "raw_evolution_scores": config.raw_evolution_scores,
            "master_seed": config.seed,
            "derived_seeds": seeds,
            "threads": config.threads,
        },
        "windows": outcome.windows,
        "series": series.points,
        "spikes": spikes,
    });
    let metadata_text =
        serde_json::to_string_pretty(&metadata).map_err(|e| Error::InvalidConfig(format!("metadata: {e}")))?;
    write_file(&out("run.json"), &metadata_text, &mut files)?;

    Ok(RunArtifacts {
        out_dir: config.out_dir.clone(),
        family: corpus.family().to_string(),
        load_report,
        series_csv: out("series.csv"),
        spikes,
        files,
    })
}

/// Scores one opcode file against a serialized HMM; the `score` CLI verb.
pub fn score_opcode_file(model_path: &Path, opcode_path: &Path) -> Result<f64> {
    let (model, symbols) = crate::hmm::read_model_text(model_path)?;
    let text = fs::read_to_string(opcode_path)
        .map_err(|e| Error::io(format!("read {}", opcode_path.display()), e))?;
    let tokens = crate::corpus::parse_opcode_file(&text, &opcode_path.display().to_string())?;
    let vocab = crate::features::vocabulary_from_symbols(symbols, 1)?;
    let sample = crate::corpus::Sample {
        id: opcode_path.display().to_string(),
        family: String::new(),
        created: chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
        opcodes: tokens,
    };
    crate::hmm::score_llpo(&model, &vocab.encode(&sample))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_synth_spec(dir: &Path, evolution: bool, seed: u64) -> PathBuf {
        let spec = SynthSpec::benchmark(24, 12, 10, evolution.then_some(12), 1.0, seed);
        let path = dir.join("synth.json");
        fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
        path
    }

    #[test]
    fn engine_labels_parse() {
        assert!(matches!(parse_engine("raw").unwrap(), EngineConfig::Raw));
        assert!(matches!(parse_engine("ngram(5)").unwrap(), EngineConfig::Ngram { n: 5 }));
        assert!(matches!(
            parse_engine("word2vec(3)").unwrap(),
            EngineConfig::Word2Vec { params: SgnsParams { dim: 3, .. }, .. }
        ));
        assert!(matches!(
            parse_engine("hmm2vec(2)").unwrap(),
            EngineConfig::Hmm2Vec { config: HmmTrainConfig { n_states: 2, .. }, .. }
        ));
        assert!(parse_engine("ngram(1)").is_err());
        assert!(parse_engine("kernel").is_err());
    }

    #[test]
    fn key_value_parsing_rejects_unknown_keys() {
        let map = parse_key_values("engine = raw\nsynth = spec.json\nbogus = 1\n").unwrap();
        let err = RunConfig::from_key_values(&map).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn config_requires_exactly_one_corpus_source() {
        let both = parse_key_values("engine = raw\nmanifest = a.csv\nsynth = b.json\n").unwrap();
        assert!(RunConfig::from_key_values(&both).is_err());
        let neither = parse_key_values("engine = raw\n").unwrap();
        assert!(RunConfig::from_key_values(&neither).is_err());
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join("out");
        let config = RunConfig {
            manifest: Some(PathBuf::from("a.csv")),
            synth: Some(PathBuf::from("b.json")),
            out_dir: out_dir.clone(),
            ..Default::default()
        };
        assert!(run_pipeline(&config).is_err());
        assert!(!out_dir.exists());
    }

    #[test]
    fn full_run_emits_all_artifacts_and_confirms_the_planted_spike() {
        let dir = tempfile::tempdir().unwrap();
        let synth = write_synth_spec(dir.path(), true, 33);
        let config = RunConfig {
            synth: Some(synth),
            vocabulary_size: 10,
            out_dir: dir.path().join("out"),
            seed: 42,
            ..Default::default()
        };
        let artifacts = run_pipeline(&config).unwrap();
        for name in ["series.csv", "series.svg", "spikes.csv", "run.json", "vocabulary.txt"] {
            assert!(dir.path().join("out").join(name).exists(), "{name} missing");
        }
        let confirmed: Vec<_> =
            artifacts.spikes.iter().filter(|s| s.confirmed == Verdict::Confirmed).collect();
        assert!(!confirmed.is_empty(), "expected a confirmed spike, got {:?}", artifacts.spikes);
        let spike = confirmed[0];
        assert!(dir.path().join("out").join(format!("evolution_{}.csv", spike.month)).exists());
        assert!(dir.path().join("out").join(format!("evolution_{}.svg", spike.month)).exists());
        assert!(dir.path().join("out").join(format!("evolution_{}_before.hmm", spike.month)).exists());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let synth = write_synth_spec(dir.path(), true, 7);
        let run = |out: &str| -> (String, String) {
            let config = RunConfig {
                synth: Some(dir.path().join("synth.json")),
                vocabulary_size: 10,
                out_dir: dir.path().join(out),
                seed: 9,
                ..Default::default()
            };
            run_pipeline(&config).unwrap();
            (
                fs::read_to_string(dir.path().join(out).join("series.csv")).unwrap(),
                fs::read_to_string(dir.path().join(out).join("spikes.csv")).unwrap(),
            )
        };
        let _ = synth;
        let (series_a, spikes_a) = run("out_a");
        let (series_b, spikes_b) = run("out_b");
        assert_eq!(series_a, series_b);
        assert_eq!(spikes_a, spikes_b);
    }

    #[test]
    fn score_verb_roundtrip() {
        use ndarray::array;
        let dir = tempfile::tempdir().unwrap();
        let model = crate::hmm::HmmModel {
            a: array![[0.5, 0.5], [0.5, 0.5]],
            b: array![[0.25, 0.25, 0.5], [0.25, 0.25, 0.5]],
            pi: array![0.5, 0.5],
        };
        let symbols = vec!["mov".to_string(), "add".to_string(), crate::features::OTHER_SYMBOL.to_string()];
        let model_path = dir.path().join("m.hmm");
        write_model_text(&model, &symbols, &model_path).unwrap();
        let opcodes_path = dir.path().join("ops.txt");
        fs::write(&opcodes_path, "mov\nadd\nxor\n").unwrap();
        let llpo = score_opcode_file(&model_path, &opcodes_path).unwrap();
        // Emissions are state-independent: P = 0.25 * 0.25 * 0.5.
        let expected = (0.25f64.ln() * 2.0 + 0.5f64.ln()) / 3.0;
        assert!((llpo - expected).abs() < 1e-12);
    }
}
