use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
///
/// Variants split into configuration problems (bad specs, bad parameters)
/// and data problems (unusable corpora, malformed inputs). The CLI maps the
/// two groups onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed sample {source_name}: {reason}")]
    MalformedSample { source_name: String, reason: String },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("no valid samples loaded from {path}")]
    EmptyCorpus { path: PathBuf },

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthSpec(String),

    #[error("empty vocabulary: no sample of length >= {n}")]
    EmptyVocabulary { n: usize },

    #[error("sample {id} too short: {len} tokens, need >= {n}")]
    SampleTooShort { id: String, len: usize, n: usize },

    #[error("embedding table inconsistent with vocabulary: {0}")]
    EmbeddingMismatch(String),

    #[error("observation symbol {symbol} out of range (model has {n_symbols} symbols)")]
    SymbolOutOfRange { symbol: usize, n_symbols: usize },

    #[error("empty observation sequence")]
    EmptySequence,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("window {window}: class {class} is empty, window skipped")]
    EmptyClass { window: String, class: &'static str },

    #[error("corpus spans {months} months; need at least 13 (a year window plus a probe month)")]
    CorpusTooShort { months: u32 },

    #[error("chi-squared series has {points} usable points; need at least 3 for spike detection")]
    SeriesTooShort { points: usize },

    #[error("score lists differ in length: {correct} vs {cross}")]
    ScoreLengthMismatch { correct: usize, cross: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model file {path}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// True for errors caused by configuration rather than by the data.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidConfig(_) | Error::InvalidSynthSpec(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
