//! Detects evolution points in a family of timestamped opcode-sequence
//! samples.
//!
//! The pipeline slides year/month window pairs across a corpus, trains a
//! linear SVM per pair, graphs the chi-squared distance between adjacent
//! weight vectors, flags spikes, and confirms each spike by training hidden
//! Markov models on either side and cross-scoring the samples.

pub mod corpus;
pub mod error;
pub mod evolution;
pub mod features;
pub mod hmm;
pub mod pipeline;
pub mod svg;
pub mod svm;
pub mod timeline;
pub mod word2vec;

pub use error::{Error, Result};
