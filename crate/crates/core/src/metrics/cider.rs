use std::collections::{BTreeMap, BTreeSet};

use super::ngram::counts;
use crate::error::{IdcError, Result};

/// Width of the Gaussian length penalty, in bigram counts.
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CiderScores {
    pub scores: Vec<f64>,
    /// Set when the corpus has a single sample: every idf weight is zero.
    pub degenerate: bool,
}

impl CiderScores {
    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            0.0
        } else {
            self.scores.iter().sum::<f64>() / self.scores.len() as f64
        }
    }
}

type Df<'a> = BTreeMap<&'a [String], usize>;

struct TfIdf<'a> {
    vec: [BTreeMap<&'a [String], f64>; 4],
    norm: [f64; 4],
    len: f64,
}

fn tfidf<'a>(tokens: &'a [String], df: &Df<'_>, log_n: f64) -> TfIdf<'a> {
    let mut vec: [BTreeMap<&[String], f64>; 4] = Default::default();
    let mut norm = [0.0; 4];
    for n in 1..=4 {
        let mut grams: Vec<_> = counts(tokens, n).into_iter().collect();
        grams.sort();
        for (g, tf) in grams {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = tf as f64 * (log_n - d.ln());
            norm[n - 1] += w * w;
            vec[n - 1].insert(g, w);
        }
    }
    TfIdf {
        vec,
        norm: norm.map(f64::sqrt),
        len: tokens.len().saturating_sub(1) as f64,
    }
}

fn sim(h: &TfIdf<'_>, r: &TfIdf<'_>) -> f64 {
    let delta = h.len - r.len;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..4 {
        let mut val = 0.0;
        for (g, &wh) in &h.vec[n] {
            if let Some(&wr) = r.vec[n].get(g) {
                val += wh.min(wr) * wr;
            }
        }
        if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
            val /= h.norm[n] * r.norm[n];
        }
        total += val * penalty;
    }
    total
}

/// CIDEr-D per sample. Document frequencies come from the references, one
/// count per sample; idf is `log N - log max(1, df)` with `N` samples.
pub fn cider_d(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<CiderScores> {
    if candidates.len() != references.len() {
        return Err(IdcError::InvalidArgument(format!(
            "{} candidates for {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(|r| r.is_empty()) {
        return Err(IdcError::InvalidArgument(format!("sample {i} has no references")));
    }
    let mut df: Df = BTreeMap::new();
    for refs in references {
        let mut seen: BTreeSet<&[String]> = BTreeSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (candidates.len() as f64).ln();
    let scores = candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| {
            let h = tfidf(c, &df, log_n);
            let total: f64 = refs.iter().map(|r| sim(&h, &tfidf(r, &df, log_n))).sum();
            total / 4.0 / refs.len() as f64 * 10.0
        })
        .collect();
    Ok(CiderScores {
        scores,
        degenerate: candidates.len() < 2,
    })
}
