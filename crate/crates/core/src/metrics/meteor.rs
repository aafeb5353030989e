/// Precision/recall balance of the harmonic mean.
pub const METEOR_ALPHA: f64 = 0.9;
/// Fragmentation penalty weight and exponent.
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_THETA: f64 = 3.0;

const SUFFIXES: [&str; 5] = ["ing", "ed", "es", "e", "s"];

/// Crude suffix stripper: removes the first matching suffix if at least three
/// characters remain.
pub fn stem(w: &str) -> &str {
    for s in SUFFIXES {
        if let Some(base) = w.strip_suffix(s) {
            if base.len() >= 3 {
                return base;
            }
        }
    }
    w
}

pub fn words_match(a: &str, b: &str) -> bool {
    a == b || stem(a) == stem(b)
}

/// Number of runs of adjacent matches. `pairs` is sorted by candidate index.
pub fn chunks(pairs: &[(usize, usize)]) -> usize {
    let mut n = 0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if k == 0 || pairs[k - 1] != (i.wrapping_sub(1), j.wrapping_sub(1)) {
            n += 1;
        }
    }
    n
}

/// One-to-one alignment with the most matches and, among those, the fewest
/// chunks. Exhaustive search with a simple bound; captions are short.
pub fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let options: Vec<Vec<usize>> = candidate
        .iter()
        .map(|c| {
            (0..reference.len())
                .filter(|&j| words_match(c, &reference[j]))
                .collect()
        })
        .collect();
    // suffix counts of alignable candidate words, for the bound
    let mut reachable = vec![0; candidate.len() + 1];
    for i in (0..candidate.len()).rev() {
        reachable[i] = reachable[i + 1] + (!options[i].is_empty()) as usize;
    }
    struct Search<'a> {
        options: &'a [Vec<usize>],
        reachable: &'a [usize],
        used: Vec<bool>,
        cur: Vec<(usize, usize)>,
        best: Vec<(usize, usize)>,
        best_chunks: usize,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize) {
            if self.cur.len() + self.reachable[i] < self.best.len() {
                return;
            }
            if i == self.options.len() {
                let ch = chunks(&self.cur);
                if self.cur.len() > self.best.len() || (self.cur.len() == self.best.len() && ch < self.best_chunks) {
                    self.best = self.cur.clone();
                    self.best_chunks = ch;
                }
                return;
            }
            for k in 0..self.options[i].len() {
                let j = self.options[i][k];
                if !self.used[j] {
                    self.used[j] = true;
                    self.cur.push((i, j));
                    self.go(i + 1);
                    self.cur.pop();
                    self.used[j] = false;
                }
            }
            self.go(i + 1);
        }
    }
    let mut s = Search {
        options: &options,
        reachable: &reachable,
        used: vec![false; reference.len()],
        cur: Vec::new(),
        best: Vec::new(),
        best_chunks: usize::MAX,
    };
    s.go(0);
    s.best
}

/// Score of a given alignment.
pub fn score_alignment(c_len: usize, r_len: usize, pairs: &[(usize, usize)]) -> f64 {
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c_len as f64;
    let r = m as f64 / r_len as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let pen = METEOR_GAMMA * (chunks(pairs) as f64 / m as f64).powf(METEOR_THETA);
    fmean * (1.0 - pen)
}

/// METEOR with exact and suffix-stem matching only (reported as M*).
pub fn meteor_lite(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| score_alignment(candidate.len(), r.len(), &align(candidate, r)))
        .fold(0.0, f64::max)
}
