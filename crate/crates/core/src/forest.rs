//! Binary random-forest classifier.
//!
//! Each tree is a CART tree grown on a bootstrap resample of the training
//! set, choosing at every node the Gini-optimal axis-aligned split among a
//! random subset of features. Leaves hold the fraction of positive samples
//! that reached them, and the forest score is the mean leaf fraction.

use std::io::Read;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};

/// Splits must lower the weighted Gini impurity by more than this.
pub const MIN_IMPURITY_DECREASE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means ⌈√d⌉.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn features_for(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .max(1)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("forest: {m}")));
        if self.n_trees == 0 {
            return fail("n_trees must be at least 1".into());
        }
        if self.max_depth == Some(0) {
            return fail("max_depth must be positive".into());
        }
        if self.min_samples_leaf == 0 {
            return fail("min_samples_leaf must be positive".into());
        }
        if self.features_per_split == Some(0) {
            return fail("features_per_split must be positive".into());
        }
        let m = self.features_for(dim);
        if m > dim {
            return fail(format!("features_per_split {m} exceeds dimension {dim}"));
        }
        Ok(())
    }
}

/// Tree node in preorder layout. Samples with `x[f] <= t` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "l")]
        left: usize,
        #[serde(rename = "r")]
        right: usize,
    },
    Leaf {
        #[serde(rename = "p")]
        positive_fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn from_nodes(nodes: Vec<Node>) -> Result<DecisionTree> {
        let tree = DecisionTree { nodes };
        tree.validate(None, None)?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Leaf fraction reached by `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { positive_fraction } => return positive_fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn validate(&self, dim: Option<usize>, max_depth: Option<usize>) -> Result<()> {
        let bad = |message: String| Error::Format {
            what: "decision tree",
            message,
        };
        if self.nodes.is_empty() {
            return Err(bad("tree has no nodes".into()));
        }
        // Preorder: a split's left child follows it directly and its right
        // child starts right after the left subtree ends.
        fn walk(
            nodes: &[Node],
            i: usize,
            depth: usize,
            dim: Option<usize>,
            max_depth: Option<usize>,
        ) -> std::result::Result<usize, String> {
            if i >= nodes.len() {
                return Err(format!("node index {i} out of range"));
            }
            match nodes[i] {
                Node::Leaf { positive_fraction } => {
                    if !(0.0..=1.0).contains(&positive_fraction) {
                        return Err(format!(
                            "node {i}: leaf fraction {positive_fraction} outside [0, 1]"
                        ));
                    }
                    Ok(i + 1)
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if max_depth.is_some_and(|m| depth >= m) {
                        return Err(format!("node {i}: split below the depth limit"));
                    }
                    if dim.is_some_and(|d| feature >= d) {
                        return Err(format!("node {i}: feature {feature} out of range"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    if left != i + 1 {
                        return Err(format!("node {i}: left child {left} is not {}", i + 1));
                    }
                    let end = walk(nodes, left, depth + 1, dim, max_depth)?;
                    if right != end {
                        return Err(format!("node {i}: right child {right} is not {end}"));
                    }
                    walk(nodes, right, depth + 1, dim, max_depth)
                }
            }
        }
        let end = walk(&self.nodes, 0, 0, dim, max_depth).map_err(bad)?;
        if end != self.nodes.len() {
            return Err(bad(format!("{} unreachable nodes", self.nodes.len() - end)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
}

/// Gini impurity of a node with `pos` positives among `n`.
fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    // Adjacent floats can round up to `hi`, which would send it left.
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Scans every midpoint threshold of every candidate feature and returns
/// the split with the largest Gini decrease. Features are visited in
/// ascending order and thresholds ascending, and only a strictly larger
/// decrease replaces the incumbent.
fn scan_splits(
    data: &[(Vec<f64>, bool)],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
    scratch: &mut Vec<(f64, bool)>,
) -> Option<Split> {
    let n = rows.len();
    let total_pos = rows.iter().filter(|&&r| data[r].1).count();
    let parent = gini(total_pos, n);
    let mut best: Option<Split> = None;
    let mut sorted_features = features.to_vec();
    sorted_features.sort_unstable();
    for &f in &sorted_features {
        scratch.clear();
        scratch.extend(rows.iter().map(|&r| (data[r].0[f], data[r].1)));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0;
        for i in 0..n - 1 {
            if scratch[i].1 {
                left_pos += 1;
            }
            let (lo, hi) = (scratch[i].0, scratch[i + 1].0);
            if lo == hi {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let weighted = (nl as f64 * gini(left_pos, nl)
                + nr as f64 * gini(total_pos - left_pos, nr))
                / n as f64;
            let decrease = parent - weighted;
            if decrease > MIN_IMPURITY_DECREASE
                && best.is_none_or(|b| decrease > b.impurity_decrease)
            {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    impurity_decrease: decrease,
                });
            }
        }
    }
    best
}

/// Best Gini split of `samples` over `candidate_features`, or `None` when
/// no threshold lowers the impurity.
pub fn best_split(samples: &[(Vec<f64>, bool)], candidate_features: &[usize]) -> Option<Split> {
    if samples.is_empty() {
        return None;
    }
    let rows: Vec<usize> = (0..samples.len()).collect();
    scan_splits(samples, &rows, candidate_features, 1, &mut Vec::new())
}

/// A zero-gain split that still separates distinct vectors: the lowest
/// feature with two distinct values, cut at its most balanced midpoint.
fn separating_split(
    data: &[(Vec<f64>, bool)],
    rows: &[usize],
    dim: usize,
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = rows.len();
    for f in 0..dim {
        let mut vals: Vec<f64> = rows.iter().map(|&r| data[r].0[f]).collect();
        vals.sort_by(f64::total_cmp);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n - 1 {
            if vals[i] == vals[i + 1] || i + 1 < min_leaf || n - i - 1 < min_leaf {
                continue;
            }
            let imbalance = (2 * (i + 1)).abs_diff(n);
            if best.is_none_or(|(b, _)| imbalance < b) {
                best = Some((imbalance, midpoint(vals[i], vals[i + 1])));
            }
        }
        if let Some((_, t)) = best {
            return Some((f, t));
        }
    }
    None
}

struct TreeBuilder<'a> {
    data: &'a [(Vec<f64>, bool)],
    dim: usize,
    features_per_split: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    rng: Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f64, bool)>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, rows: &[usize]) {
        let pos = rows.iter().filter(|&&r| self.data[r].1).count();
        self.nodes.push(Node::Leaf {
            positive_fraction: pos as f64 / rows.len() as f64,
        });
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) {
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.data[r].1).count();
        let pure = pos == 0 || pos == n;
        if pure || self.max_depth.is_some_and(|m| depth >= m) || n < 2 * self.min_leaf {
            self.leaf(rows);
            return;
        }
        let sampled = index::sample(&mut self.rng, self.dim, self.features_per_split).into_vec();
        let mut split = scan_splits(self.data, rows, &sampled, self.min_leaf, &mut self.scratch)
            .map(|s| (s.feature, s.threshold));
        if split.is_none() && sampled.len() < self.dim {
            let rest: Vec<usize> = (0..self.dim).filter(|f| !sampled.contains(f)).collect();
            split = scan_splits(self.data, rows, &rest, self.min_leaf, &mut self.scratch)
                .map(|s| (s.feature, s.threshold));
        }
        if split.is_none() {
            split = separating_split(self.data, rows, self.dim, self.min_leaf);
        }
        let Some((feature, threshold)) = split else {
            self.leaf(rows);
            return;
        };

        let data = self.data;
        let mut mid = 0;
        for i in 0..n {
            if data[rows[i]].0[feature] <= threshold {
                rows.swap(i, mid);
                mid += 1;
            }
        }
        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: at + 1,
            right: 0,
        });
        let (left_rows, right_rows) = rows.split_at_mut(mid);
        self.grow(left_rows, depth + 1);
        let right_at = self.nodes.len();
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(right_rows, depth + 1);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSize {
    pub positives: usize,
    pub negatives: usize,
}

/// A random forest trained for one canonical role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleClassifier {
    pub role: Role,
    pub dim: usize,
    pub config: ForestConfig,
    pub training_size: TrainingSize,
    pub trees: Vec<DecisionTree>,
}

fn grow_tree(
    data: &[(Vec<f64>, bool)],
    dim: usize,
    config: &ForestConfig,
    tree: usize,
) -> DecisionTree {
    let mut rng = rng_for(config.seed, &format!("forest/tree/{tree}"));
    let n = data.len();
    let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut builder = TreeBuilder {
        data,
        dim,
        features_per_split: config.features_for(dim),
        max_depth: config.max_depth,
        min_leaf: config.min_samples_leaf,
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(n),
    };
    builder.grow(&mut rows, 0);
    DecisionTree {
        nodes: builder.nodes,
    }
}

/// Fit a forest on `(features, label)` samples. Bootstrap draws index into
/// `samples` as given, so callers wanting order-independence must pass a
/// canonical ordering.
pub fn train_forest(
    role: Role,
    samples: &[(Vec<f64>, bool)],
    config: &ForestConfig,
) -> Result<RoleClassifier> {
    let dim = samples.first().map(|s| s.0.len()).unwrap_or(0);
    if let Some(bad) = samples.iter().find(|s| s.0.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.0.len(),
        });
    }
    let positives = samples.iter().filter(|s| s.1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    config.validate(dim)?;
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(samples, dim, config, t))
        .collect();
    Ok(RoleClassifier {
        role,
        dim,
        config: config.clone(),
        training_size: TrainingSize {
            positives,
            negatives,
        },
        trees,
    })
}

impl RoleClassifier {
    /// Mean positive fraction over the leaves `x` reaches.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<RoleClassifier> {
        let c: RoleClassifier = serde_json::from_str(s)?;
        c.check()?;
        Ok(c)
    }

    pub fn read_json<R: Read>(r: R) -> Result<RoleClassifier> {
        let c: RoleClassifier = serde_json::from_reader(r)?;
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<()> {
        let bad = |message: String| Error::Format {
            what: "forest model",
            message,
        };
        if self.trees.len() != self.config.n_trees {
            return Err(bad(format!(
                "config declares {} trees, found {}",
                self.config.n_trees,
                self.trees.len()
            )));
        }
        if self.dim == 0 {
            return Err(bad("dimension must be positive".into()));
        }
        self.config.validate(self.dim)?;
        for (i, t) in self.trees.iter().enumerate() {
            t.validate(Some(self.dim), self.config.max_depth)
                .map_err(|e| bad(format!("tree {i}: {e}")))?;
        }
        Ok(())
    }
}
