use std::path::Path;

use idc_core::metrics::{bleu4, cider_d, corpus_bleu4, meteor_lite, rouge_l, words};
use serde::Deserialize;

#[derive(Deserialize)]
struct Sample {
    id: String,
    candidate: String,
    references: Vec<String>,
}

#[derive(Deserialize)]
struct Expected {
    samples: Vec<ExpectedSample>,
    corpus_bleu4: f64,
}

#[derive(Deserialize)]
struct ExpectedSample {
    id: String,
    bleu4: f64,
    rouge_l: f64,
    meteor: f64,
    cider_d: f64,
}

fn load<T: for<'de> Deserialize<'de>>(name: &str) -> T {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn five_sample_corpus_matches_oracle() {
    let corpus: Vec<Sample> = load("metrics_corpus.json");
    let expected: Expected = load("metrics_expected.json");
    let cands: Vec<Vec<String>> = corpus.iter().map(|s| words(&s.candidate)).collect();
    let refs: Vec<Vec<Vec<String>>> = corpus
        .iter()
        .map(|s| s.references.iter().map(|r| words(r)).collect())
        .collect();
    let cider = cider_d(&cands, &refs).unwrap();
    assert!(!cider.degenerate);
    for (i, e) in expected.samples.iter().enumerate() {
        assert_eq!(corpus[i].id, e.id);
        let got = [
            bleu4(&cands[i], &refs[i]),
            rouge_l(&cands[i], &refs[i]),
            meteor_lite(&cands[i], &refs[i]),
            cider.scores[i],
        ];
        let want = [e.bleu4, e.rouge_l, e.meteor, e.cider_d];
        for (name, (g, w)) in ["bleu4", "rouge_l", "meteor", "cider_d"]
            .iter()
            .zip(got.iter().zip(want))
        {
            assert!((g - w).abs() < 1e-6, "{} {name}: {g} vs {w}", e.id);
        }
    }
    let c = corpus_bleu4(&cands, &refs);
    assert!((c - expected.corpus_bleu4).abs() < 1e-6, "{c}");
}
