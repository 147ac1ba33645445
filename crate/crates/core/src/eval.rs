//! Train/test splitting and evaluation metrics.
//!
//! Classification quality is measured with precision, recall and F1 of the
//! positive class at a score threshold. Ranking quality is measured with
//! NDCG over the four graded labels using exponential gains
//! `2^g - 1` and a `log2(i + 1)` position discount.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextualTriple, RelevanceLabel, Role};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::pipeline::{binarize_label, rank, train_role_models, ModelBundle};
use crate::seed::rng_for;

/// Graded gain per relevance label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainMap {
    pub highly_relevant: f64,
    pub relevant: f64,
    pub neutral: f64,
    pub irrelevant: f64,
}

impl Default for GainMap {
    fn default() -> Self {
        GainMap {
            highly_relevant: 3.0,
            relevant: 2.0,
            neutral: 1.0,
            irrelevant: 0.0,
        }
    }
}

impl GainMap {
    pub fn gain(&self, label: RelevanceLabel) -> f64 {
        match label {
            RelevanceLabel::HighlyRelevant => self.highly_relevant,
            RelevanceLabel::Relevant => self.relevant,
            RelevanceLabel::Neutral => self.neutral,
            RelevanceLabel::Irrelevant => self.irrelevant,
        }
    }

    /// Gains must be finite, nonnegative and strictly ordered
    /// highly relevant > relevant > neutral > irrelevant.
    pub fn validate(&self) -> Result<()> {
        let g = [
            self.highly_relevant,
            self.relevant,
            self.neutral,
            self.irrelevant,
        ];
        if g.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("gains must be finite and nonnegative".into()));
        }
        if !g.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config(
                "gains must decrease strictly: highly_relevant > relevant > neutral > irrelevant"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Stratified split by (role, binarized label).
///
/// Within each stratum the members are put in id order, shuffled with the
/// seeded generator and the first `⌈fraction·n⌉` go to training. Both
/// halves keep the input order.
pub fn split_train_test(
    labeled: &[ContextualTriple],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<ContextualTriple>, Vec<ContextualTriple>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut strata: BTreeMap<(&Role, Option<bool>), Vec<&str>> = BTreeMap::new();
    for t in labeled {
        let class = t.label.and_then(binarize_label);
        strata.entry((&t.role, class)).or_default().push(&t.id);
    }
    let mut rng = rng_for(seed, "split");
    let mut train_ids: HashSet<&str> = HashSet::new();
    for members in strata.values_mut() {
        members.sort_unstable();
        members.shuffle(&mut rng);
        // The small slack keeps e.g. 0.7 * 10 from rounding up to 8.
        let take = ((fraction * members.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        train_ids.extend(members.iter().take(take.min(members.len())).copied());
    }
    let (train, test) = labeled
        .iter()
        .cloned()
        .partition(|t| train_ids.contains(t.id.as_str()));
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    /// No predicted positives; precision is reported as 0.
    pub precision_undefined: bool,
    /// No gold positives; recall is reported as 0.
    pub recall_undefined: bool,
}

impl BinaryMetrics {
    pub fn from_counts(counts: Counts) -> BinaryMetrics {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        BinaryMetrics {
            precision,
            recall,
            f1,
            counts,
            precision_undefined: counts.tp + counts.fp == 0,
            recall_undefined: counts.tp + counts.fn_ == 0,
        }
    }
}

/// Precision, recall and F1 of `(score, gold)` pairs; a score at or above
/// `threshold` predicts positive.
pub fn precision_recall_f1(items: &[(f64, bool)], threshold: f64) -> BinaryMetrics {
    let mut c = Counts::default();
    for &(score, gold) in items {
        match (score >= threshold, gold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    BinaryMetrics::from_counts(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ndcg {
    pub value: f64,
    /// The ideal ranking has zero gain; `value` is 1 by convention.
    pub degenerate: bool,
}

fn dcg(gains: &[f64], cutoff: usize) -> f64 {
    gains
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, g)| (2f64.powf(*g) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG of relevance gains listed in ranked order.
pub fn ndcg_from_gains(ranked_gains: &[f64], cutoff: Option<usize>) -> Ndcg {
    let cutoff = cutoff.unwrap_or(ranked_gains.len());
    let mut ideal = ranked_gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, cutoff);
    if idcg <= 0.0 {
        return Ndcg {
            value: 1.0,
            degenerate: true,
        };
    }
    Ndcg {
        value: dcg(ranked_gains, cutoff) / idcg,
        degenerate: false,
    }
}

/// NDCG of gold labels listed in ranked order.
pub fn ndcg(ranked: &[RelevanceLabel], gains: &GainMap, cutoff: Option<usize>) -> Ndcg {
    let g: Vec<f64> = ranked.iter().map(|&l| gains.gain(l)).collect();
    ndcg_from_gains(&g, cutoff)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Canonical role, or `ALL` for the aggregate.
    pub role: String,
    pub n: usize,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
    pub counts: Counts,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub ndcg_degenerate: bool,
    /// The role had no classifier, so every triple scored 0.
    pub unknown_role: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub roles: Vec<EvalReport>,
    pub aggregate: EvalReport,
}

/// Score and rank the test triples of each role and report P/R/F1 over
/// binarizable labels and NDCG over all labels. The aggregate sums the
/// confusion counts over roles and averages NDCG.
pub fn evaluate(
    bundle: &ModelBundle,
    test: &[ContextualTriple],
    threshold: f64,
    gains: &GainMap,
) -> Result<Evaluation> {
    let mut by_role: BTreeMap<&Role, Vec<ContextualTriple>> = BTreeMap::new();
    for t in test {
        if t.label.is_none() {
            return Err(Error::Config(format!(
                "test triple {:?} has no label",
                t.id
            )));
        }
        by_role.entry(&t.role).or_default().push(t.clone());
    }
    let mut roles = Vec::new();
    let mut total = Counts::default();
    for (role, triples) in by_role {
        let ranked = rank(bundle.score_triples(&triples)?);
        let labels: Vec<RelevanceLabel> = ranked.iter().filter_map(|s| s.triple.label).collect();
        let binary: Vec<(f64, bool)> = ranked
            .iter()
            .filter_map(|s| {
                s.triple
                    .label
                    .and_then(binarize_label)
                    .map(|y| (s.score, y))
            })
            .collect();
        let m = precision_recall_f1(&binary, threshold);
        let nd = ndcg(&labels, gains, None);
        total.add(&m.counts);
        roles.push(EvalReport {
            role: role.to_string(),
            n: triples.len(),
            threshold,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            ndcg: nd.value,
            counts: m.counts,
            precision_undefined: m.precision_undefined,
            recall_undefined: m.recall_undefined,
            ndcg_degenerate: nd.degenerate,
            unknown_role: !bundle.classifiers.contains_key(role),
        });
    }
    let agg = BinaryMetrics::from_counts(total);
    let mean_ndcg = if roles.is_empty() {
        1.0
    } else {
        roles.iter().map(|r| r.ndcg).sum::<f64>() / roles.len() as f64
    };
    let aggregate = EvalReport {
        role: "ALL".into(),
        n: test.len(),
        threshold,
        precision: agg.precision,
        recall: agg.recall,
        f1: agg.f1,
        ndcg: mean_ndcg,
        counts: total,
        precision_undefined: agg.precision_undefined,
        recall_undefined: agg.recall_undefined,
        ndcg_degenerate: roles.is_empty() || roles.iter().all(|r| r.ndcg_degenerate),
        unknown_role: false,
    };
    Ok(Evaluation { roles, aggregate })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionRun {
    pub fraction: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub skipped_roles: Vec<crate::pipeline::SkippedRole>,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct Protocol {
    pub fractions: Vec<f64>,
    pub forest: ForestConfig,
    pub split_seed: u64,
    pub threshold: f64,
    pub gains: GainMap,
}

/// For each training fraction: split, train fresh role models on the
/// training part, evaluate on the rest.
pub fn run_protocol(
    labeled: &[ContextualTriple],
    embedding: Arc<EmbeddingModel>,
    protocol: &Protocol,
) -> Result<Vec<FractionRun>> {
    protocol.gains.validate()?;
    protocol
        .fractions
        .iter()
        .map(|&fraction| {
            let (train, test) = split_train_test(labeled, fraction, protocol.split_seed)?;
            let bundle = train_role_models(&train, embedding.clone(), &protocol.forest)?;
            let evaluation = evaluate(&bundle, &test, protocol.threshold, &protocol.gains)?;
            Ok(FractionRun {
                fraction,
                train_size: train.len(),
                test_size: test.len(),
                skipped_roles: bundle.skipped,
                evaluation,
            })
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Flat `role,fraction,precision,recall,f1,ndcg` table, one row per role
/// and fraction followed by the aggregate row of each fraction.
pub fn write_report_csv<W: Write>(mut w: W, runs: &[FractionRun]) -> Result<()> {
    writeln!(w, "role,fraction,precision,recall,f1,ndcg")?;
    for run in runs {
        for r in run
            .evaluation
            .roles
            .iter()
            .chain(std::iter::once(&run.evaluation.aggregate))
        {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                csv_field(&r.role),
                run.fraction,
                r.precision,
                r.recall,
                r.f1,
                r.ndcg
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    runs: &'a [FractionRun],
}

pub fn write_report_json<W: Write>(mut w: W, runs: &[FractionRun]) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, &ReportDoc { runs })?;
    w.write_all(b"\n")?;
    Ok(())
}
