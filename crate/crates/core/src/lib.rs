//! Role relevance scoring for contextual entity triples.
//!
//! Context sentences are pooled into a corpus and used to train skip-gram
//! word vectors. Each triple's context becomes a unit-length feature
//! vector (the normalized, count-weighted sum of its word vectors), a
//! random forest per role turns that vector into a relevance probability,
//! and triples are ranked by that probability.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod pipeline;
pub mod seed;
pub mod synthetic;

pub use config::RunConfig;
pub use corpus::{
    build_corpus, canonicalize_role, parse_triples, tokenize, ContextualTriple, RelevanceLabel,
    Role,
};
pub use embedding::{
    build_vocabulary, train_skipgram, EmbeddingConfig, EmbeddingModel, Vocabulary,
};
pub use error::{Error, Result};
pub use eval::{evaluate, ndcg, precision_recall_f1, split_train_test, GainMap};
pub use features::{context_vector, l2_normalize, ContextFeatureVector};
pub use forest::{best_split, train_forest, ForestConfig, RoleClassifier};
pub use pipeline::{binarize_label, rank, train_role_models, ModelBundle, ScoredTriple};
