use std::collections::HashMap;

pub type Ngram<'a> = &'a [String];

/// Lowercased whitespace tokens.
pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// Counts of all n-grams of order `n`.
pub fn counts(tokens: &[String], n: usize) -> HashMap<Ngram<'_>, usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}
