use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate triple id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("role must not be empty")]
    EmptyRole,

    #[error("unknown relevance label {0:?}")]
    UnknownLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("no word occurs at least {min_count} times")]
    NoWordSurvives { min_count: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("at least one negative sample is required")]
    NoNegatives,

    #[error("word {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("training data contains a single class ({positives} positives, {negatives} negatives); both classes are required")]
    SingleClass { positives: usize, negatives: usize },

    #[error("no role had enough labeled data to train a classifier")]
    NoTrainableRoles,

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
