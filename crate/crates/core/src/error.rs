use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty graph")]
    EmptyGraph,

    #[error("output width underflow: need {needed} values, have {available}")]
    OutputWidthUnderflow { needed: usize, available: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph mismatch: expected `{expected}`, got `{actual}`")]
    GraphMismatch { expected: String, actual: String },

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("incomplete ParamSet: {0}")]
    IncompleteParamSet(String),

    #[error("negative standard deviation {0}")]
    NegativeStd(f64),

    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("elite size {elite} exceeds population size {population}")]
    EliteTooLarge { elite: usize, population: usize },

    #[error("mean pairwise distance needs at least 2 individuals, got {0}")]
    TooFewIndividuals(usize),

    #[error("corrupt genealogy: {0}")]
    CorruptGenealogy(String),

    #[error("action out of range: {0}")]
    ActionOutOfRange(String),

    #[error("environment fault: {0}")]
    Environment(String),

    #[error("ask/tell protocol violation: {0}")]
    Protocol(String),

    #[error("non-finite fitness at index {0}")]
    NonFiniteFitness(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown run directory {0}")]
    UnknownRunDir(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
