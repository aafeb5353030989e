use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::bleu::{bleu4, corpus_bleu4};
use super::cider::cider_d;
use super::meteor::meteor_lite;
use super::ngram::words;
use super::rouge::rouge_l;
use crate::dataset::Triplet;
use crate::error::{IdcError, Result};
use crate::imaging::Category;

/// One model output, as read from or written to prediction JSONL.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub caption: String,
}

/// Ground truth for one sample. The category is optional so external
/// reference files can be scored too.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub id: String,
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
}

impl From<&Triplet> for Reference {
    fn from(t: &Triplet) -> Self {
        Reference {
            id: t.id.clone(),
            captions: t.captions.clone(),
            category: Some(t.category),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleScores {
    pub id: String,
    pub category: Option<Category>,
    pub prediction: String,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Means {
    pub n: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

impl Means {
    fn of<'a>(rows: impl Iterator<Item = &'a SampleScores>) -> Self {
        let mut m = Means::default();
        for r in rows {
            m.n += 1;
            m.bleu4 += r.bleu4;
            m.rouge_l += r.rouge_l;
            m.meteor += r.meteor;
            m.cider += r.cider;
        }
        if m.n > 0 {
            let n = m.n as f64;
            m.bleu4 /= n;
            m.rouge_l /= n;
            m.meteor /= n;
            m.cider /= n;
        }
        m
    }
}

/// Per-sample scores, per-category and overall means of them, and corpus
/// BLEU-4 (which does not decompose into the per-sample values).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub samples: Vec<SampleScores>,
    pub per_category: BTreeMap<Category, Means>,
    pub overall: Means,
    pub corpus_bleu4: f64,
    pub cider_degenerate: bool,
}

/// Scores `predictions` against `references`. Every reference needs exactly
/// one prediction; samples are processed in id order so the input order
/// never matters.
pub fn corpus_evaluate(predictions: &[Prediction], references: &[Reference]) -> Result<MetricReport> {
    let mut by_id: HashMap<&str, &str> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(&p.id, &p.caption).is_some() {
            return Err(IdcError::Record {
                id: p.id.clone(),
                message: "duplicate prediction".into(),
            });
        }
    }
    let mut refs: Vec<&Reference> = references.iter().collect();
    refs.sort_by(|a, b| a.id.cmp(&b.id));
    for w in refs.windows(2) {
        if w[0].id == w[1].id {
            return Err(IdcError::Record {
                id: w[0].id.clone(),
                message: "duplicate reference".into(),
            });
        }
    }
    let mut cands = Vec::with_capacity(refs.len());
    let mut ref_words = Vec::with_capacity(refs.len());
    for r in &refs {
        let p = by_id
            .remove(r.id.as_str())
            .ok_or_else(|| IdcError::MissingPrediction(r.id.clone()))?;
        if r.captions.is_empty() {
            return Err(IdcError::Record {
                id: r.id.clone(),
                message: "no reference captions".into(),
            });
        }
        cands.push(words(p));
        ref_words.push(r.captions.iter().map(|c| words(c)).collect::<Vec<_>>());
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(IdcError::Record {
            id: extra.to_string(),
            message: "prediction has no reference".into(),
        });
    }
    let cider = cider_d(&cands, &ref_words)?;
    let samples: Vec<SampleScores> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| SampleScores {
            id: r.id.clone(),
            category: r.category,
            prediction: cands[i].join(" "),
            bleu4: bleu4(&cands[i], &ref_words[i]),
            rouge_l: rouge_l(&cands[i], &ref_words[i]),
            meteor: meteor_lite(&cands[i], &ref_words[i]),
            cider: cider.scores[i],
        })
        .collect();
    let mut per_category = BTreeMap::new();
    for c in Category::ALL {
        let m = Means::of(samples.iter().filter(|s| s.category == Some(c)));
        if m.n > 0 {
            per_category.insert(c, m);
        }
    }
    Ok(MetricReport {
        overall: Means::of(samples.iter()),
        per_category,
        corpus_bleu4: corpus_bleu4(&cands, &ref_words),
        cider_degenerate: cider.degenerate,
        samples,
    })
}

impl MetricReport {
    fn rows(&self) -> Vec<(String, Means)> {
        let mut rows: Vec<(String, Means)> = self
            .per_category
            .iter()
            .map(|(c, m)| (c.title().to_string(), *m))
            .collect();
        rows.push(("Overall".into(), self.overall));
        rows
    }

    /// Per-category rows plus an Overall row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,n,bleu4,rouge_l,meteor_star,cider_d\n");
        for (name, m) in self.rows() {
            writeln!(
                out,
                "{name},{},{:.6},{:.6},{:.6},{:.6}",
                m.n, m.bleu4, m.rouge_l, m.meteor, m.cider
            )
            .unwrap();
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Category | N | BLEU-4 | ROUGE-L | M* | CIDEr-D |\n|---|---|---|---|---|---|\n");
        for (name, m) in self.rows() {
            writeln!(
                out,
                "| {name} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                m.n, m.bleu4, m.rouge_l, m.meteor, m.cider
            )
            .unwrap();
        }
        writeln!(
            out,
            "\nCorpus BLEU-4: {:.4} (not an average of sample scores)",
            self.corpus_bleu4
        )
        .unwrap();
        writeln!(out, "M* is METEOR with exact and stem matching only.").unwrap();
        if self.cider_degenerate {
            writeln!(out, "Warning: single-sample corpus, CIDEr-D idf weights are all zero.").unwrap();
        }
        out
    }

    pub fn samples_csv(&self) -> String {
        let mut out = String::from("id,category,bleu4,rouge_l,meteor_star,cider_d,prediction\n");
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                s.id,
                s.category.map(|c| c.key()).unwrap_or(""),
                s.bleu4,
                s.rouge_l,
                s.meteor,
                s.cider,
                s.prediction
            )
            .unwrap();
        }
        out
    }

    pub fn category_mean(&self, category: Category) -> Option<Means> {
        self.per_category.get(&category).copied()
    }
}

/// Share of samples whose prediction matches any reference word for word.
pub fn exact_match_rate(predictions: &[Prediction], references: &[Reference]) -> Result<f64> {
    let by_id: HashMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.id.as_str(), p.caption.as_str()))
        .collect();
    if references.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for r in references {
        let p = by_id
            .get(r.id.as_str())
            .ok_or_else(|| IdcError::MissingPrediction(r.id.clone()))?;
        let pw = words(p);
        if r.captions.iter().any(|c| words(c) == pw) {
            hits += 1;
        }
    }
    Ok(hits as f64 / references.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs() -> Vec<Reference> {
        let mk = |id: &str, caps: &[&str], c| Reference {
            id: id.into(),
            captions: caps.iter().map(|s| s.to_string()).collect(),
            category: Some(c),
        };
        vec![
            mk(
                "s1",
                &["the small red circle was removed", "the small red circle disappeared"],
                Category::Drop,
            ),
            mk("s2", &["no change was made", "nothing changed"], Category::Same),
            mk(
                "s3",
                &["a large blue square was added", "a large blue square appeared"],
                Category::Add,
            ),
            mk(
                "s4",
                &[
                    "the large solid square turned green",
                    "the large solid square became green",
                ],
                Category::Color,
            ),
            mk("s5", &["the small striped triangle moved left"], Category::Move),
        ]
    }

    fn preds(f: impl Fn(&Reference) -> String) -> Vec<Prediction> {
        refs()
            .iter()
            .map(|r| Prediction {
                id: r.id.clone(),
                caption: f(r),
            })
            .collect()
    }

    #[test]
    fn categories_average_to_overall() {
        let p = preds(|r| r.captions.last().unwrap().replace("large", "small"));
        let rep = corpus_evaluate(&p, &refs()).unwrap();
        let n: usize = rep.per_category.values().map(|m| m.n).sum();
        let w: f64 = rep.per_category.values().map(|m| m.cider * m.n as f64).sum::<f64>() / n as f64;
        assert!((w - rep.overall.cider).abs() < 1e-9);
        let w: f64 = rep.per_category.values().map(|m| m.bleu4 * m.n as f64).sum::<f64>() / n as f64;
        assert!((w - rep.overall.bleu4).abs() < 1e-9);
    }

    #[test]
    fn input_order_is_irrelevant() {
        let p = preds(|r| r.captions[0].clone());
        let mut p2 = p.clone();
        p2.reverse();
        let mut r2 = refs();
        r2.rotate_left(2);
        assert_eq!(
            corpus_evaluate(&p, &refs()).unwrap(),
            corpus_evaluate(&p2, &r2).unwrap()
        );
    }

    #[test]
    fn first_reference_beats_corruptions() {
        let best = corpus_evaluate(&preds(|r| r.captions[0].clone()), &refs()).unwrap();
        let corrupted = [
            preds(|r| r.captions[0].split(' ').skip(1).collect::<Vec<_>>().join(" ")),
            preds(|r| {
                let mut w: Vec<&str> = r.captions[0].split(' ').collect();
                w.swap(0, 1);
                w.join(" ")
            }),
            preds(|_| "no change was made".into()),
        ];
        for c in corrupted {
            let rep = corpus_evaluate(&c, &refs()).unwrap();
            assert!(rep.overall.cider < best.overall.cider);
        }
        assert!((best.overall.bleu4 - 1.0).abs() < 1e-12);
        assert!((best.overall.rouge_l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_and_extra_predictions_rejected() {
        let mut p = preds(|r| r.captions[0].clone());
        let last = p.pop().unwrap();
        match corpus_evaluate(&p, &refs()) {
            Err(IdcError::MissingPrediction(id)) => assert_eq!(id, "s5"),
            other => panic!("{other:?}"),
        }
        p.push(last);
        p.push(Prediction {
            id: "s9".into(),
            caption: "x".into(),
        });
        assert!(matches!(corpus_evaluate(&p, &refs()), Err(IdcError::Record { .. })));
    }

    #[test]
    fn tables_have_overall_row() {
        let rep = corpus_evaluate(&preds(|r| r.captions[0].clone()), &refs()).unwrap();
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 1 + 5 + 1);
        assert!(csv.lines().last().unwrap().starts_with("Overall,5,1.000000,1.000000"));
        assert!(rep.to_markdown().contains("| Overall | 5 |"));
        assert_eq!(
            exact_match_rate(&preds(|r| r.captions[0].clone()), &refs()).unwrap(),
            1.0
        );
    }
}
