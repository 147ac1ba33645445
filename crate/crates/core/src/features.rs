//! Context feature vectors: count-weighted bag-of-words pooling of word
//! vectors, scaled back onto the unit hypersphere.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::embedding::EmbeddingModel;
use crate::error::Result;

/// Norms at or below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// Set when the input norm was too small to normalize; `values` is zero.
    pub degenerate: bool,
}

pub fn l2_normalize(v: &[f64]) -> Normalized {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > DEGENERATE_NORM && norm.is_finite() {
        Normalized {
            values: v.iter().map(|x| x / norm).collect(),
            degenerate: false,
        }
    } else {
        Normalized {
            values: vec![0.0; v.len()],
            degenerate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatureVector {
    pub values: Vec<f64>,
    /// True iff no context token was in the vocabulary.
    pub oov: bool,
}

impl ContextFeatureVector {
    /// True when the vector carries no direction, either because every
    /// token was out of vocabulary or because the word vectors cancelled.
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&x| x == 0.0)
    }
}

/// Pool the word vectors of every in-vocabulary token occurrence across
/// `sentences` and normalize the sum.
///
/// Occurrences are tallied per word and summed in vocabulary order, so the
/// result is bit-identical under any reordering of sentences or tokens.
pub fn context_vector<S: AsRef<str>>(
    sentences: &[S],
    model: &EmbeddingModel,
) -> ContextFeatureVector {
    debug_assert!(
        model.is_finalized(),
        "context vectors need a finalized model"
    );
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for s in sentences {
        for tok in tokenize(s.as_ref()) {
            if let Some(i) = model.vocab().index_of(&tok) {
                *counts.entry(i).or_default() += 1;
            }
        }
    }
    // Dividing out the common factor makes a context repeated k times
    // produce exactly the same sum, not just the same direction.
    let g = counts.values().fold(0, |a, &b| gcd(a, b)).max(1);
    let mut sum = vec![0.0; model.dim()];
    for (&i, &n) in &counts {
        let n = (n / g) as f64;
        for (acc, &x) in sum.iter_mut().zip(model.vector(i)) {
            *acc += n * x;
        }
    }
    ContextFeatureVector {
        values: l2_normalize(&sum).values,
        oov: counts.is_empty(),
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Serialize)]
struct CfvRecord<'a> {
    id: &'a str,
    oov: bool,
    values: &'a [f64],
}

/// Debug dump: one `{"id", "oov", "values"}` object per line.
pub fn write_cfv_dump<'a, W, I>(mut w: W, items: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a ContextFeatureVector)>,
{
    for (id, cfv) in items {
        serde_json::to_writer(
            &mut w,
            &CfvRecord {
                id,
                oov: cfv.oov,
                values: &cfv.values,
            },
        )?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
