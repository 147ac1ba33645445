//! Synthetic datasets for demos and end-to-end checks.
//!
//! Relevant contexts mix role-specific words into shared background text;
//! irrelevant contexts use background text only. The strength of the role
//! signal follows the relevance grade.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpus::{ContextualTriple, RelevanceLabel, Role};
use crate::error::Result;
use crate::seed::rng_for;

#[derive(Clone, Debug)]
pub struct SyntheticRoles {
    pub roles: Vec<String>,
    pub triples_per_role: usize,
    pub role_vocab: usize,
    pub background_vocab: usize,
    pub sentences_per_triple: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Share of each label among a role's triples, in the order highly
    /// relevant, relevant, neutral, irrelevant.
    pub label_mix: [f64; 4],
    pub seed: u64,
}

impl Default for SyntheticRoles {
    fn default() -> Self {
        SyntheticRoles {
            roles: vec!["affiliate".into(), "trustee".into(), "issuer".into()],
            triples_per_role: 400,
            role_vocab: 20,
            background_vocab: 60,
            sentences_per_triple: 3,
            min_words: 8,
            max_words: 12,
            label_mix: [0.3, 0.2, 0.1, 0.4],
            seed: 2017,
        }
    }
}

/// Fraction of role-specific words in a context of the given grade.
fn role_word_share(label: RelevanceLabel) -> f64 {
    match label {
        RelevanceLabel::HighlyRelevant => 0.5,
        RelevanceLabel::Relevant => 0.35,
        RelevanceLabel::Neutral => 0.1,
        RelevanceLabel::Irrelevant => 0.0,
    }
}

pub fn role_word(role: &str, j: usize) -> String {
    format!("{role}w{j}")
}

pub fn background_word(j: usize) -> String {
    format!("common{j}")
}

/// Labeled triples for every configured role.
pub fn role_triples(params: &SyntheticRoles) -> Result<Vec<ContextualTriple>> {
    let mut rng = rng_for(params.seed, "synthetic/roles");
    let mut out = Vec::new();
    for role_name in &params.roles {
        let role = Role::new(role_name)?;
        let n = params.triples_per_role;
        let mut labels = Vec::with_capacity(n);
        for (label, share) in RelevanceLabel::ALL.into_iter().zip(params.label_mix) {
            labels.extend(std::iter::repeat_n(
                label,
                (share * n as f64).round() as usize,
            ));
        }
        labels.resize(n, RelevanceLabel::Irrelevant);
        labels.shuffle(&mut rng);

        for (i, label) in labels.into_iter().enumerate() {
            let share = role_word_share(label);
            let sentences = (0..params.sentences_per_triple)
                .map(|_| {
                    let len = rng.random_range(params.min_words..=params.max_words);
                    (0..len)
                        .map(|_| {
                            if rng.random::<f64>() < share {
                                role_word(role.as_str(), rng.random_range(0..params.role_vocab))
                            } else {
                                background_word(rng.random_range(0..params.background_vocab))
                            }
                        })
                        .collect::<Vec<_>>()
                        .join(" ")
                        + "."
                })
                .collect();
            out.push(ContextualTriple {
                id: format!("{}-{i:04}", role.as_str()),
                head: format!("HEAD {}", i % 17),
                role: role.clone(),
                tail: format!("TAIL {}", i % 23),
                sentences,
                label: Some(label),
            });
        }
    }
    Ok(out)
}

/// Sentences whose words all come from a single clique, `per_clique`
/// sentences for each clique.
pub fn clique_corpus(cliques: &[&[&str]], per_clique: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = rng_for(seed, "synthetic/cliques");
    let mut corpus = Vec::with_capacity(cliques.len() * per_clique);
    for _ in 0..per_clique {
        for clique in cliques {
            let len = rng.random_range(clique.len()..=2 * clique.len());
            corpus.push(
                (0..len)
                    .map(|_| clique[rng.random_range(0..clique.len())].to_string())
                    .collect(),
            );
        }
    }
    corpus
}
