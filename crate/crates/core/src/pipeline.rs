//! Per-role training, scoring and ranking of contextual triples.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextualTriple, RelevanceLabel, Role};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::features::{context_vector, ContextFeatureVector};
use crate::forest::{train_forest, ForestConfig, RoleClassifier};
use crate::seed::derive_seed;

/// Score given to triples whose context has no usable word vector.
pub const OOV_SCORE: f64 = 0.5;

/// Score given to triples whose role has no classifier.
pub const UNKNOWN_ROLE_SCORE: f64 = 0.0;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Relevant and highly relevant map to the positive class, irrelevant to
/// the negative class; neutral judgements are not used for training.
pub fn binarize_label(label: RelevanceLabel) -> Option<bool> {
    match label {
        RelevanceLabel::HighlyRelevant | RelevanceLabel::Relevant => Some(true),
        RelevanceLabel::Irrelevant => Some(false),
        RelevanceLabel::Neutral => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRole {
    pub role: Role,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub embedding: Arc<EmbeddingModel>,
    pub classifiers: BTreeMap<Role, RoleClassifier>,
    pub skipped: Vec<SkippedRole>,
}

fn usable(cfv: &ContextFeatureVector) -> bool {
    !cfv.oov && !cfv.is_zero()
}

/// Featurized training rows for one role, sorted by triple id.
fn role_samples(
    triples: &[&ContextualTriple],
    embedding: &EmbeddingModel,
) -> Vec<(Vec<f64>, bool)> {
    let mut rows: Vec<(&str, Vec<f64>, bool)> = triples
        .iter()
        .filter_map(|t| {
            let y = binarize_label(t.label?)?;
            let cfv = context_vector(&t.sentences, embedding);
            if usable(&cfv) {
                Some((t.id.as_str(), cfv.values, y))
            } else {
                None
            }
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    rows.into_iter().map(|(_, x, y)| (x, y)).collect()
}

/// Train one forest per canonical role found in `labeled`.
///
/// Each role's forest is seeded from `forest_config.seed` and the role
/// name. Roles lacking two samples of each class are reported in
/// `skipped` instead of failing the run.
pub fn train_role_models(
    labeled: &[ContextualTriple],
    embedding: Arc<EmbeddingModel>,
    forest_config: &ForestConfig,
) -> Result<ModelBundle> {
    let mut by_role: BTreeMap<&Role, Vec<&ContextualTriple>> = BTreeMap::new();
    for t in labeled {
        by_role.entry(&t.role).or_default().push(t);
    }

    let outcomes: Vec<(Role, std::result::Result<RoleClassifier, String>)> = by_role
        .into_par_iter()
        .map(|(role, triples)| {
            let samples = role_samples(&triples, &embedding);
            let pos = samples.iter().filter(|s| s.1).count();
            let neg = samples.len() - pos;
            let outcome = if samples.is_empty() {
                Err("no trainable labels".to_string())
            } else if pos == 0 || neg == 0 {
                Err("single-class".to_string())
            } else if pos < 2 || neg < 2 {
                Err(format!("too few samples ({pos} positive, {neg} negative)"))
            } else {
                let config = ForestConfig {
                    seed: derive_seed(forest_config.seed, &format!("role/{role}")),
                    ..forest_config.clone()
                };
                train_forest(role.clone(), &samples, &config).map_err(|e| e.to_string())
            };
            (role.clone(), outcome)
        })
        .collect();

    let mut classifiers = BTreeMap::new();
    let mut skipped = Vec::new();
    for (role, outcome) in outcomes {
        match outcome {
            Ok(c) => {
                classifiers.insert(role, c);
            }
            Err(reason) => skipped.push(SkippedRole { role, reason }),
        }
    }
    if classifiers.is_empty() {
        return Err(Error::NoTrainableRoles);
    }
    Ok(ModelBundle {
        embedding,
        classifiers,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTriple {
    pub triple: ContextualTriple,
    pub score: f64,
    /// The context had no usable word vector and got [`OOV_SCORE`].
    pub oov_fallback: bool,
    /// No classifier exists for the role; the score is [`UNKNOWN_ROLE_SCORE`].
    pub unknown_role: bool,
}

impl ModelBundle {
    fn score_one(&self, t: &ContextualTriple) -> Result<ScoredTriple> {
        let scored = |score, oov_fallback, unknown_role| ScoredTriple {
            triple: t.clone(),
            score,
            oov_fallback,
            unknown_role,
        };
        // The role must match exactly for a non-zero score, so the role
        // check wins over the context fallback.
        let Some(clf) = self.classifiers.get(&t.role) else {
            return Ok(scored(UNKNOWN_ROLE_SCORE, false, true));
        };
        let cfv = context_vector(&t.sentences, &self.embedding);
        if !usable(&cfv) {
            return Ok(scored(OOV_SCORE, true, false));
        }
        Ok(scored(clf.predict_proba(&cfv.values)?, false, false))
    }

    /// Score every triple with the classifier of its role.
    pub fn score_triples(&self, triples: &[ContextualTriple]) -> Result<Vec<ScoredTriple>> {
        triples.par_iter().map(|t| self.score_one(t)).collect()
    }

    /// Write one forest file per role plus a manifest into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut used = BTreeSet::new();
        let mut entries = Vec::new();
        for (role, clf) in &self.classifiers {
            let stem: String = role
                .as_str()
                .chars()
                .map(|c| {
                    if c.is_alphanumeric() || c == '-' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            let mut file = format!("{stem}.forest.json");
            let mut n = 1;
            while !used.insert(file.clone()) {
                n += 1;
                file = format!("{stem}-{n}.forest.json");
            }
            let mut json = clf.to_json()?;
            json.push('\n');
            fs::write(dir.join(&file), json)?;
            entries.push(ManifestEntry {
                role: role.clone(),
                file,
            });
        }
        let manifest = Manifest {
            dim: self.embedding.dim(),
            roles: entries,
            skipped: self.skipped.clone(),
        };
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    /// Load classifiers saved by [`ModelBundle::save_dir`].
    pub fn load_dir(dir: &Path, embedding: Arc<EmbeddingModel>) -> Result<ModelBundle> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "model manifest",
            message: format!("{}: {e}", manifest_path.display()),
        })?;
        if manifest.dim != embedding.dim() {
            return Err(Error::DimensionMismatch {
                expected: embedding.dim(),
                found: manifest.dim,
            });
        }
        let mut classifiers = BTreeMap::new();
        for entry in manifest.roles {
            let path = dir.join(&entry.file);
            let corrupt = |message: String| Error::Format {
                what: "forest model",
                message: format!("{}: {message}", path.display()),
            };
            let text = fs::read_to_string(&path).map_err(|e| corrupt(e.to_string()))?;
            let clf = RoleClassifier::from_json(&text).map_err(|e| corrupt(e.to_string()))?;
            if clf.role != entry.role {
                return Err(corrupt(format!(
                    "holds role {:?}, manifest says {:?}",
                    clf.role, entry.role
                )));
            }
            if clf.dim != embedding.dim() {
                return Err(corrupt(format!(
                    "dimension {} does not match embedding {}",
                    clf.dim,
                    embedding.dim()
                )));
            }
            classifiers.insert(entry.role, clf);
        }
        if manifest
            .skipped
            .iter()
            .any(|s| classifiers.contains_key(&s.role))
        {
            return Err(Error::Format {
                what: "model manifest",
                message: "a role is listed as both trained and skipped".into(),
            });
        }
        Ok(ModelBundle {
            embedding,
            classifiers,
            skipped: manifest.skipped,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    role: Role,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    roles: Vec<ManifestEntry>,
    skipped: Vec<SkippedRole>,
}

/// Sort by descending score, ties by ascending triple id.
pub fn rank(mut scored: Vec<ScoredTriple>) -> Vec<ScoredTriple> {
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.triple.id.cmp(&b.triple.id))
    });
    scored
}

#[derive(Serialize)]
struct ScoreRecord<'a> {
    id: &'a str,
    role: &'a Role,
    score: f64,
    oov_fallback: bool,
}

/// JSON lines of `{"id", "role", "score", "oov_fallback"}` in the given order.
pub fn write_scores<W: Write>(mut w: W, scored: &[ScoredTriple]) -> Result<()> {
    for s in scored {
        serde_json::to_writer(
            &mut w,
            &ScoreRecord {
                id: &s.triple.id,
                role: &s.triple.role,
                score: s.score,
                oov_fallback: s.oov_fallback,
            },
        )?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
