use std::collections::HashMap;

use super::ngram::counts;

/// Stand-in numerator for an n-gram order with no clipped matches.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Clipped matches and candidate n-gram totals for orders 1..=4.
fn clipped(candidate: &[String], references: &[Vec<String>]) -> ([usize; 4], [usize; 4]) {
    let mut matched = [0; 4];
    let mut total = [0; 4];
    for n in 1..=4 {
        let cand = counts(candidate, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (g, c) in counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in cand {
            matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            total[n - 1] += c;
        }
    }
    (matched, total)
}

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn combine(matched: [usize; 4], total: [usize; 4], c: usize, r: usize) -> f64 {
    if c == 0 {
        return 0.0;
    }
    let log_p: f64 = (0..4)
        .map(|i| {
            let num = if matched[i] == 0 {
                BLEU_EPSILON
            } else {
                matched[i] as f64
            };
            (num / total[i].max(1) as f64).ln()
        })
        .sum::<f64>()
        / 4.0;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

/// Sentence-level BLEU-4 with uniform weights.
pub fn bleu4(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let (m, t) = clipped(candidate, references);
    combine(m, t, candidate.len(), closest_ref_len(candidate.len(), references))
}

/// Corpus BLEU-4: counts and lengths are summed before combining, so it is
/// not an average of sentence scores.
pub fn corpus_bleu4(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> f64 {
    let mut matched = [0; 4];
    let mut total = [0; 4];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in candidates.iter().zip(references) {
        let (m, t) = clipped(cand, refs);
        for i in 0..4 {
            matched[i] += m[i];
            total[i] += t[i];
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    combine(matched, total, c, r)
}
