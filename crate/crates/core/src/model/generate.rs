use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::vocab::EOS;
use crate::error::{IdcError, Result};

/// Anything that can score the next token after a prefix of generated tokens
/// (BOS implied, not included).
pub trait StepLogits {
    fn step_logits(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

impl<F: FnMut(&[usize]) -> Result<Vec<f64>>> StepLogits for F {
    fn step_logits(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        self(prefix)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// A decoded sequence without BOS/EOS. `log_prob` includes the EOS step when
/// `ended` is set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub ended: bool,
}

/// Final ranking: higher log-prob, then shorter, then lexicographically smaller.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|&v| (v - mx).exp()).sum();
    let lz = mx + z.ln();
    x.iter().map(|&v| v - lz).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

fn scores<M: StepLogits + ?Sized>(m: &mut M, prefix: &[usize]) -> Result<Vec<f64>> {
    let logits = m.step_logits(prefix)?;
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(IdcError::InvalidArgument(format!(
            "step logits after {} tokens are empty or non-finite",
            prefix.len()
        )));
    }
    Ok(log_softmax(&logits))
}

pub fn greedy<M: StepLogits + ?Sized>(m: &mut M, max_len: usize) -> Result<Hypothesis> {
    let mut h = Hypothesis::default();
    while h.tokens.len() < max_len {
        let lp = scores(m, &h.tokens)?;
        let tok = argmax(&lp);
        h.log_prob += lp[tok];
        if tok == EOS {
            h.ended = true;
            break;
        }
        h.tokens.push(tok);
    }
    Ok(h)
}

/// Beam search of width `k`. The greedy sequence is always among the final
/// candidates, so the result never scores below greedy decoding.
pub fn beam<M: StepLogits + ?Sized>(m: &mut M, k: usize, max_len: usize) -> Result<Hypothesis> {
    if k == 0 {
        return Err(IdcError::InvalidArgument("beam width must be at least 1".into()));
    }
    let mut finished = vec![greedy(m, max_len)?];
    let mut live = vec![Hypothesis::default()];
    while !live.is_empty() {
        let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        // scores only fall as sequences grow
        live.retain(|h| h.log_prob > best_done || (h.log_prob == best_done && h.tokens.len() < max_len));
        if live.is_empty() {
            break;
        }
        let mut expanded = Vec::new();
        for h in &live {
            if h.tokens.len() >= max_len {
                finished.push(h.clone());
                continue;
            }
            let lp = scores(m, &h.tokens)?;
            for (tok, &l) in lp.iter().enumerate() {
                let mut next = h.clone();
                next.log_prob += l;
                next.tokens.push(tok);
                expanded.push(next);
            }
        }
        expanded.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens)));
        expanded.truncate(k);
        live.clear();
        for mut h in expanded {
            if h.tokens.last() == Some(&EOS) {
                h.tokens.pop();
                h.ended = true;
                finished.push(h);
            } else {
                live.push(h);
            }
        }
    }
    finished.sort_by(rank);
    Ok(finished.swap_remove(0))
}

pub fn generate<M: StepLogits + ?Sized>(m: &mut M, mode: DecodeMode, max_len: usize) -> Result<Hypothesis> {
    match mode {
        DecodeMode::Greedy => greedy(m, max_len),
        DecodeMode::Beam(k) => beam(m, k, max_len),
    }
}
