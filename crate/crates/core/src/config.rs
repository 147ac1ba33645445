//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! Module seeds are never set directly. They derive from the master seed
//! via [`derive_seed`] with the tags `embedding`, `forest` and `split`.

use std::fmt::Write as _;

use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::eval::GainMap;
use crate::forest::ForestConfig;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub threshold: f64,
    pub fractions: Vec<f64>,
    pub embedding: EmbeddingConfig,
    pub forest: ForestConfig,
    pub gains: GainMap,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            threads: 1,
            threshold: 0.5,
            fractions: vec![0.1, 0.5, 0.9],
            embedding: EmbeddingConfig::default(),
            forest: ForestConfig::default(),
            gains: GainMap::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_optional<T: std::str::FromStr>(
    key: &str,
    value: &str,
    none_words: &[&str],
) -> Result<Option<T>> {
    if none_words.contains(&value.to_ascii_lowercase().as_str()) {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

impl RunConfig {
    /// Parse a config file body. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.embedding;
        let f = &mut self.forest;
        let g = &mut self.gains;
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            "threshold" => self.threshold = parse_num(key, value)?,
            "fractions" => {
                self.fractions = value
                    .split(',')
                    .map(|v| parse_num(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "embedding.dim" => e.dim = parse_num(key, value)?,
            "embedding.window" => e.window = parse_num(key, value)?,
            "embedding.negatives" => e.negatives = parse_num(key, value)?,
            "embedding.epochs" => e.epochs = parse_num(key, value)?,
            "embedding.lr_initial" => e.lr_initial = parse_num(key, value)?,
            "embedding.lr_final" => e.lr_final = parse_num(key, value)?,
            "embedding.min_count" => e.min_count = parse_num(key, value)?,
            "embedding.unigram_power" => e.unigram_power = parse_num(key, value)?,
            "embedding.subsample" => e.subsample = parse_optional(key, value, &["none", "off"])?,
            "forest.n_trees" => f.n_trees = parse_num(key, value)?,
            "forest.max_depth" => f.max_depth = parse_optional(key, value, &["none", "unlimited"])?,
            "forest.min_samples_leaf" => f.min_samples_leaf = parse_num(key, value)?,
            "forest.features_per_split" => {
                f.features_per_split = parse_optional(key, value, &["auto", "sqrt"])?
            }
            "gain.highly_relevant" => g.highly_relevant = parse_num(key, value)?,
            "gain.relevant" => g.relevant = parse_num(key, value)?,
            "gain.neutral" => g.neutral = parse_num(key, value)?,
            "gain.irrelevant" => g.irrelevant = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.fractions.is_empty() {
            return Err(Error::Config(
                "at least one split fraction is required".into(),
            ));
        }
        if let Some(bad) = self.fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::Config(format!(
                "split fraction {bad} must lie strictly between 0 and 1"
            )));
        }
        self.embedding_config().validate()?;
        self.forest.validate(self.embedding.dim)?;
        self.gains.validate()
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            seed: derive_seed(self.seed, "embedding"),
            workers: self.threads,
            ..self.embedding.clone()
        }
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            seed: derive_seed(self.seed, "forest"),
            ..self.forest.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    /// Every key with its default, in config-file syntax.
    pub fn describe_defaults() -> String {
        let d = RunConfig::default();
        let e = &d.embedding;
        let f = &d.forest;
        let g = &d.gains;
        let mut s = String::new();
        let fr: Vec<String> = d.fractions.iter().map(|x| x.to_string()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("seed", d.seed.to_string()),
            ("threads", d.threads.to_string()),
            ("threshold", d.threshold.to_string()),
            ("fractions", fr.join(",")),
            ("embedding.dim", e.dim.to_string()),
            ("embedding.window", e.window.to_string()),
            ("embedding.negatives", e.negatives.to_string()),
            ("embedding.epochs", e.epochs.to_string()),
            ("embedding.lr_initial", e.lr_initial.to_string()),
            ("embedding.lr_final", e.lr_final.to_string()),
            ("embedding.min_count", e.min_count.to_string()),
            ("embedding.unigram_power", e.unigram_power.to_string()),
            ("embedding.subsample", "none".into()),
            ("forest.n_trees", f.n_trees.to_string()),
            ("forest.max_depth", "unlimited".into()),
            ("forest.min_samples_leaf", f.min_samples_leaf.to_string()),
            ("forest.features_per_split", "auto (ceil(sqrt(dim)))".into()),
            ("gain.highly_relevant", g.highly_relevant.to_string()),
            ("gain.relevant", g.relevant.to_string()),
            ("gain.neutral", g.neutral.to_string()),
            ("gain.irrelevant", g.irrelevant.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "  {k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_and_overrides() {
        let text = "# experiment\nseed = 7\nembedding.dim = 10  # small\nforest.max_depth = 12\nforest.features_per_split = auto\nfractions = 0.2, 0.8\n\n";
        let mut cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.embedding.dim, 10);
        assert_eq!(cfg.forest.max_depth, Some(12));
        assert_eq!(cfg.forest.features_per_split, None);
        assert_eq!(cfg.fractions, [0.2, 0.8]);
        cfg.apply_override("forest.max_depth=none").unwrap();
        assert_eq!(cfg.forest.max_depth, None);
        cfg.validate().unwrap();
    }

    #[test]
    fn reports_bad_lines() {
        let err = RunConfig::from_text("seed = 1\nnonsense\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(RunConfig::from_text("bogus.key = 1").is_err());
        assert!(RunConfig::from_text("embedding.dim = many").is_err());
    }

    #[test]
    fn validation_catches_nested_errors() {
        let mut cfg = RunConfig::default();
        cfg.set("fractions", "0.1,1.0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("embedding.epochs", "0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("gain.neutral", "5").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("forest.features_per_split", "31").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seeds_derive_from_master() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 43,
            ..RunConfig::default()
        };
        assert_ne!(a.embedding_config().seed, a.forest_config().seed);
        assert_ne!(a.embedding_config().seed, b.embedding_config().seed);
        assert_eq!(a.forest_config(), RunConfig::default().forest_config());
    }

    #[test]
    fn defaults_listing_mentions_every_key() {
        let listing = RunConfig::describe_defaults();
        let mut cfg = RunConfig::default();
        for line in listing.lines() {
            let key = line.split('=').next().unwrap().trim();
            let value = match key {
                "fractions" => "0.5",
                "forest.features_per_split" => "auto",
                _ => line.split('=').nth(1).unwrap().trim(),
            };
            cfg.set(key, value).unwrap();
        }
        assert_eq!(cfg.embedding, RunConfig::default().embedding);
    }
}
