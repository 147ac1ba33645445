//! Skip-gram word embeddings trained with negative sampling.
//!
//! Training minimizes, for every (center, context) pair inside a sentence
//! window,
//!
//! ```text
//! loss = -ln σ(u_ctx · v_center) - Σ_j ln σ(-u_neg_j · v_center)
//! ```
//!
//! where `v` rows live in the input matrix (the word vectors) and `u` rows
//! in the output matrix. Negatives are drawn from the unigram distribution
//! raised to `unigram_power`. After training the input vectors are scaled
//! onto the unit hypersphere and the output matrix is discarded.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::thread;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};

/// Tolerance for the unit-norm invariant of finalized vectors.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_words(words: Vec<String>, counts: Vec<u64>) -> Result<Vocabulary> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Format {
                    what: "vocabulary",
                    message: format!("duplicate word {w:?}"),
                });
            }
        }
        Ok(Vocabulary {
            words,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Occurrence counts in vocabulary order. Counts are not persisted, so a
    /// vocabulary read back from disk reports zeros.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }
}

/// Count words and keep those seen at least `min_count` times, ordered by
/// descending count with lexicographic tie-breaks.
pub fn build_vocabulary(corpus: &[Vec<String>], min_count: usize) -> Result<Vocabulary> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in corpus.iter().flatten() {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count as u64)
        .collect();
    if kept.is_empty() {
        return Err(Error::NoWordSurvives { min_count });
    }
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let (words, counts) = kept.into_iter().map(|(w, c)| (w.to_string(), c)).unzip();
    Vocabulary::from_words(words, counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub min_count: usize,
    pub unigram_power: f64,
    /// Frequent-word subsampling threshold; `None` disables subsampling.
    pub subsample: Option<f64>,
    /// Worker threads. More than one worker updates the shared matrices
    /// without locking and gives up run-to-run reproducibility.
    pub workers: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 30,
            window: 5,
            negatives: 5,
            epochs: 20,
            lr_initial: 0.025,
            lr_final: 0.0001,
            min_count: 1,
            unigram_power: 0.75,
            subsample: None,
            workers: 1,
            seed: 42,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("embedding: {m}")));
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        if self.window == 0 {
            return fail("window must be positive");
        }
        if self.negatives == 0 {
            return fail("negatives must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.min_count == 0 {
            return fail("min_count must be positive");
        }
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0 && self.lr_final < self.lr_initial) {
            return fail("learning rates must satisfy 0 < lr_final < lr_initial");
        }
        if !self.unigram_power.is_finite() {
            return fail("unigram_power must be finite");
        }
        if let Some(t) = self.subsample {
            if !(t > 0.0 && t.is_finite()) {
                return fail("subsample threshold must be positive");
            }
        }
        if self.workers == 0 {
            return fail("workers must be positive");
        }
        Ok(())
    }
}

/// Draws word ordinals with probability proportional to `count^power`.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    dist: WeightedIndex<f64>,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocabulary, power: f64) -> Result<NegativeSampler> {
        let weights = vocab.counts().iter().map(|&c| (c as f64).powf(power));
        let dist = WeightedIndex::new(weights)
            .map_err(|e| Error::Config(format!("negative sampler: {e}")))?;
        Ok(NegativeSampler { dist })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Loss of one skip-gram pair and its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradients {
    pub loss: f64,
    /// With respect to the center (input) vector.
    pub center: Vec<f64>,
    /// With respect to the true context (output) vector.
    pub context: Vec<f64>,
    /// With respect to each negative (output) vector, in the given order.
    pub negatives: Vec<Vec<f64>>,
}

/// Negative-sampling loss for one (center, context) pair plus analytic
/// gradients for every vector involved.
pub fn pair_loss_and_gradients(
    center: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
) -> Result<PairGradients> {
    let d = center.len();
    if negatives.is_empty() {
        return Err(Error::NoNegatives);
    }
    for v in std::iter::once(context).chain(negatives.iter().copied()) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    let mut grads = PairGradients {
        loss: 0.0,
        center: vec![0.0; d],
        context: vec![0.0; d],
        negatives: vec![vec![0.0; d]; negatives.len()],
    };
    let (ctx_grad, neg_grads) = (&mut grads.context, &mut grads.negatives);
    grads.loss = accumulate_pair(
        center,
        std::iter::once((context, true, ctx_grad.as_mut_slice())).chain(
            negatives
                .iter()
                .zip(neg_grads.iter_mut())
                .map(|(v, g)| (*v, false, g.as_mut_slice())),
        ),
        &mut grads.center,
    );
    Ok(grads)
}

/// Shared kernel: adds per-output gradients into the given buffers and the
/// center gradient into `center_grad`; returns the loss.
fn accumulate_pair<'a, I>(center: &[f64], outputs: I, center_grad: &mut [f64]) -> f64
where
    I: Iterator<Item = (&'a [f64], bool, &'a mut [f64])>,
{
    let mut loss = 0.0;
    for (out, positive, out_grad) in outputs {
        let score = dot(center, out);
        // d(loss)/d(score): σ(s) - 1 for the positive, σ(s) for a negative.
        let coef = if positive {
            loss -= log_sigmoid(score);
            sigmoid(score) - 1.0
        } else {
            loss -= log_sigmoid(-score);
            sigmoid(score)
        };
        for (g, &o) in center_grad.iter_mut().zip(out) {
            *g += coef * o;
        }
        for (g, &c) in out_grad.iter_mut().zip(center) {
            *g += coef * c;
        }
    }
    loss
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingStats {
    /// Mean pair loss per epoch.
    pub epoch_mean_loss: Vec<f64>,
    pub pairs: u64,
}

#[derive(Clone, Debug)]
pub struct EmbeddingModel {
    vocab: Vocabulary,
    dim: usize,
    input: Vec<f64>,
    output: Option<Vec<f64>>,
    finalized: bool,
    warnings: Vec<String>,
    stats: TrainingStats,
}

impl EmbeddingModel {
    /// Build a model directly from word vectors (row-major, `words.len() × dim`).
    pub fn from_vectors(
        words: Vec<String>,
        dim: usize,
        vectors: Vec<f64>,
    ) -> Result<EmbeddingModel> {
        if dim == 0 || vectors.len() != words.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: words.len() * dim,
                found: vectors.len(),
            });
        }
        let counts = vec![0; words.len()];
        Ok(EmbeddingModel {
            vocab: Vocabulary::from_words(words, counts)?,
            dim,
            input: vectors,
            output: None,
            finalized: false,
            warnings: Vec::new(),
            stats: TrainingStats::default(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn stats(&self) -> &TrainingStats {
        &self.stats
    }

    pub fn vector(&self, idx: usize) -> &[f64] {
        &self.input[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn word_vector(&self, word: &str) -> Option<&[f64]> {
        self.vocab.index_of(word).map(|i| self.vector(i))
    }

    pub fn output_vectors(&self) -> Option<&[f64]> {
        self.output.as_deref()
    }

    /// Scale every word vector to unit length and drop the output matrix.
    /// A zero vector is replaced by the first basis vector.
    pub fn finalize(mut self) -> EmbeddingModel {
        let dim = self.dim;
        for (i, row) in self.input.chunks_mut(dim).enumerate() {
            let norm = dot(row, row).sqrt();
            if norm > 0.0 && norm.is_finite() {
                row.iter_mut().for_each(|x| *x /= norm);
            } else {
                row.iter_mut().for_each(|x| *x = 0.0);
                row[0] = 1.0;
                let msg = format!(
                    "word {:?} has a degenerate vector; replaced by e_1",
                    self.vocab.word(i)
                );
                warn!("{msg}");
                self.warnings.push(msg);
            }
        }
        self.output = None;
        self.finalized = true;
        self
    }

    /// Largest deviation of a word-vector norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        self.input
            .chunks(self.dim)
            .map(|r| (dot(r, r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// The `k` words most cosine-similar to `seed_word`, excluding itself.
    pub fn nearest_neighbors(&self, seed_word: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if !self.finalized {
            return Err(Error::Config(
                "nearest-neighbor queries need a finalized model".into(),
            ));
        }
        if k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        let seed = self
            .vocab
            .index_of(seed_word)
            .ok_or_else(|| Error::OutOfVocabulary(seed_word.to_string()))?;
        let query = self.vector(seed);
        let mut sims: Vec<(usize, f64)> = (0..self.vocab.len())
            .filter(|&i| i != seed)
            .map(|i| (i, dot(query, self.vector(i))))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sims.truncate(k);
        Ok(sims
            .into_iter()
            .map(|(i, s)| (self.vocab.word(i).to_string(), s))
            .collect())
    }

    /// Write `<V> <dim>` followed by one `word x1 .. xdim` line per word.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.vocab.len(), self.dim)?;
        for (i, word) in self.vocab.words().iter().enumerate() {
            w.write_all(word.as_bytes())?;
            for x in self.vector(i) {
                write!(w, " {x}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the text format. Vectors already on the unit sphere are taken
    /// as-is; otherwise the model is finalized after loading.
    pub fn read_text<R: BufRead>(r: R) -> Result<EmbeddingModel> {
        let bad = |message: String| Error::Format {
            what: "embedding file",
            message,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
        let mut parts = header.split_whitespace();
        let (Some(v), Some(d), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("header {header:?} is not `<V> <dim>`")));
        };
        let n: usize = v
            .parse()
            .map_err(|_| bad(format!("bad vocabulary size {v:?}")))?;
        let dim: usize = d.parse().map_err(|_| bad(format!("bad dimension {d:?}")))?;
        if dim == 0 {
            return Err(bad("dimension must be positive".into()));
        }
        let mut words = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            if words.len() == n {
                return Err(bad(format!("line {lineno}: more than {n} word lines")));
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default();
            let before = vectors.len();
            for f in fields {
                let x: f64 = f
                    .parse()
                    .map_err(|_| bad(format!("line {lineno}: bad number {f:?}")))?;
                vectors.push(x);
            }
            if vectors.len() - before != dim {
                return Err(bad(format!(
                    "line {lineno}: expected {dim} values, found {}",
                    vectors.len() - before
                )));
            }
            words.push(word.to_string());
        }
        if words.len() != n {
            return Err(bad(format!(
                "header declares {n} words, found {}",
                words.len()
            )));
        }
        let mut model = EmbeddingModel::from_vectors(words, dim, vectors)?;
        if model.max_norm_deviation() < UNIT_NORM_TOLERANCE {
            model.finalized = true;
            Ok(model)
        } else {
            Ok(model.finalize())
        }
    }
}

/// Row-major matrix that several workers may update without locking.
/// Each component is read and written atomically; concurrent updates to the
/// same component can overwrite each other.
struct SharedMatrix {
    data: Vec<AtomicU64>,
    dim: usize,
}

impl SharedMatrix {
    fn new(values: Vec<f64>, dim: usize) -> SharedMatrix {
        SharedMatrix {
            data: values
                .into_iter()
                .map(|x| AtomicU64::new(x.to_bits()))
                .collect(),
            dim,
        }
    }

    fn read_row(&self, row: usize, buf: &mut [f64]) {
        let cells = &self.data[row * self.dim..(row + 1) * self.dim];
        for (b, c) in buf.iter_mut().zip(cells) {
            *b = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    /// `row += scale * delta`
    fn add_to_row(&self, row: usize, delta: &[f64], scale: f64) {
        let cells = &self.data[row * self.dim..(row + 1) * self.dim];
        for (c, &d) in cells.iter().zip(delta) {
            let cur = f64::from_bits(c.load(Ordering::Relaxed));
            c.store((cur + scale * d).to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f64> {
        self.data
            .into_iter()
            .map(|c| f64::from_bits(c.into_inner()))
            .collect()
    }
}

/// Per-worker random streams. Window and subsampling draws use their own
/// stream so the number of training pairs can be replayed up front.
#[derive(Clone)]
struct PairStreams {
    window: Rng,
    keep: Rng,
}

impl PairStreams {
    fn new(seed: u64, worker: usize) -> PairStreams {
        PairStreams {
            window: rng_for(seed, &format!("embedding/window/{worker}")),
            keep: rng_for(seed, &format!("embedding/subsample/{worker}")),
        }
    }
}

/// Walks the (center, context) pairs of one sentence. Returns the pairs in
/// visit order through `visit`.
fn for_each_pair(
    sentence: &[usize],
    keep_prob: Option<&[f64]>,
    window: usize,
    streams: &mut PairStreams,
    buf: &mut Vec<usize>,
    mut visit: impl FnMut(usize, usize),
) {
    buf.clear();
    match keep_prob {
        Some(p) => buf.extend(
            sentence
                .iter()
                .copied()
                .filter(|&w| streams.keep.random::<f64>() < p[w]),
        ),
        None => buf.extend_from_slice(sentence),
    }
    let n = buf.len();
    for i in 0..n {
        let b = streams.window.random_range(1..=window);
        let lo = i.saturating_sub(b);
        let hi = (i + b).min(n - 1);
        for j in lo..=hi {
            if j != i {
                visit(buf[i], buf[j]);
            }
        }
    }
}

struct WorkerOutcome {
    epoch_loss: Vec<f64>,
    epoch_pairs: Vec<u64>,
}

/// Train skip-gram vectors over `corpus`. The returned model is not yet
/// finalized.
pub fn train_skipgram(corpus: &[Vec<String>], config: &EmbeddingConfig) -> Result<EmbeddingModel> {
    config.validate()?;
    let vocab = build_vocabulary(corpus, config.min_count)?;
    let sampler = NegativeSampler::new(&vocab, config.unigram_power)?;
    let dim = config.dim;

    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|w| vocab.index_of(w))
                .collect::<Vec<_>>()
        })
        .filter(|s: &Vec<usize>| s.len() > 1)
        .collect();

    let keep_prob: Option<Vec<f64>> = config.subsample.map(|t| {
        let total: u64 = vocab.counts().iter().sum();
        vocab
            .counts()
            .iter()
            .map(|&c| {
                let f = c as f64 / total as f64;
                ((t / f).sqrt() + t / f).min(1.0)
            })
            .collect()
    });

    let mut init_rng = rng_for(config.seed, "embedding/init");
    let bound = 0.5 / dim as f64;
    let input: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| init_rng.random_range(-bound..=bound))
        .collect();
    let input = SharedMatrix::new(input, dim);
    let output = SharedMatrix::new(vec![0.0; vocab.len() * dim], dim);

    let workers = config.workers.min(sentences.len().max(1));
    let chunk = sentences.len().div_ceil(workers).max(1);
    let shards: Vec<&[Vec<usize>]> = sentences.chunks(chunk).collect();

    // Replay the pair stream to learn the total number of updates, which
    // fixes the learning-rate schedule.
    let mut total_pairs = 0usize;
    let mut scratch = Vec::new();
    for (w, shard) in shards.iter().enumerate() {
        let mut streams = PairStreams::new(config.seed, w);
        for _ in 0..config.epochs {
            for s in shard.iter() {
                for_each_pair(
                    s,
                    keep_prob.as_deref(),
                    config.window,
                    &mut streams,
                    &mut scratch,
                    |_, _| total_pairs += 1,
                );
            }
        }
    }
    let progress = AtomicUsize::new(0);

    let run_worker = |w: usize, shard: &[Vec<usize>]| -> WorkerOutcome {
        let mut streams = PairStreams::new(config.seed, w);
        let mut neg_rng = rng_for(config.seed, &format!("embedding/negatives/{w}"));
        let k = config.negatives;
        let mut center = vec![0.0; dim];
        let mut outputs = vec![vec![0.0; dim]; k + 1];
        let mut out_grads = vec![vec![0.0; dim]; k + 1];
        let mut center_grad = vec![0.0; dim];
        let mut targets = vec![0usize; k + 1];
        let mut outcome = WorkerOutcome {
            epoch_loss: vec![0.0; config.epochs],
            epoch_pairs: vec![0; config.epochs],
        };
        let mut buf = Vec::new();
        for epoch in 0..config.epochs {
            for sentence in shard {
                for_each_pair(
                    sentence,
                    keep_prob.as_deref(),
                    config.window,
                    &mut streams,
                    &mut buf,
                    |c, ctx| {
                        let step = progress.fetch_add(1, Ordering::Relaxed);
                        let frac = step as f64 / total_pairs.max(1) as f64;
                        let lr = config.lr_initial
                            + (config.lr_final - config.lr_initial) * frac.min(1.0);

                        targets[0] = ctx;
                        for t in targets[1..].iter_mut() {
                            *t = loop {
                                let n = sampler.sample(&mut neg_rng);
                                if n != ctx || vocab.len() == 1 {
                                    break n;
                                }
                            };
                        }
                        input.read_row(c, &mut center);
                        for (buf, &t) in outputs.iter_mut().zip(&targets) {
                            output.read_row(t, buf);
                        }
                        center_grad.iter_mut().for_each(|g| *g = 0.0);
                        out_grads
                            .iter_mut()
                            .for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
                        let loss = accumulate_pair(
                            &center,
                            outputs
                                .iter()
                                .zip(out_grads.iter_mut())
                                .enumerate()
                                .map(|(i, (o, g))| (o.as_slice(), i == 0, g.as_mut_slice())),
                            &mut center_grad,
                        );
                        for (g, &t) in out_grads.iter().zip(&targets) {
                            output.add_to_row(t, g, -lr);
                        }
                        input.add_to_row(c, &center_grad, -lr);
                        outcome.epoch_loss[epoch] += loss;
                        outcome.epoch_pairs[epoch] += 1;
                    },
                );
            }
        }
        outcome
    };

    let outcomes: Vec<WorkerOutcome> = if shards.len() <= 1 {
        shards
            .iter()
            .enumerate()
            .map(|(w, s)| run_worker(w, s))
            .collect()
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = shards
                .iter()
                .enumerate()
                .map(|(w, s)| {
                    let run = &run_worker;
                    scope.spawn(move || run(w, s))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("embedding worker panicked"))
                .collect()
        })
    };

    let mut stats = TrainingStats::default();
    for epoch in 0..config.epochs {
        let loss: f64 = outcomes.iter().map(|o| o.epoch_loss[epoch]).sum();
        let pairs: u64 = outcomes.iter().map(|o| o.epoch_pairs[epoch]).sum();
        stats.pairs += pairs;
        stats
            .epoch_mean_loss
            .push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
    }

    Ok(EmbeddingModel {
        vocab,
        dim,
        input: input.into_vec(),
        output: Some(output.into_vec()),
        finalized: false,
        warnings: Vec::new(),
        stats,
    })
}
