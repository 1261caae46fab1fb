use std::path::PathBuf;

use thiserror::Error;

use crate::profile::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("profile validation failed:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input contains a non-finite value at index {0}")]
    NonFinite(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("unsupported quantization bit-width {0}")]
    UnsupportedBits(u8),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("zero channel rate with {0} bytes to transmit")]
    ZeroRate(u64),

    #[error("no accuracy-drop entry for exit {exit_id}, layer {layer_index}, {bits} bits")]
    MissingAccuracyEntry { exit_id: usize, layer_index: usize, bits: u8 },

    #[error("corrupted huffman stream: {0}")]
    CorruptStream(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("every action slot is masked")]
    AllMasked,

    #[error("non-finite latency {0} ms")]
    DegenerateLatency(f64),

    #[error("non-finite parameters in {0} after update")]
    NonFiniteParameters(&'static str),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input (profiles, configs), as
    /// opposed to failures during a run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Config(_) | Error::Parse(_) | Error::CheckpointMismatch(_))
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}
