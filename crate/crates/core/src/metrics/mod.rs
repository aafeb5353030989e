//! Multi-reference caption metrics: BLEU-4, ROUGE-L, METEOR-lite (M*) and
//! CIDEr-D, with per-category aggregation.

pub mod bleu;
pub mod cider;
pub mod meteor;
pub mod ngram;
pub mod report;
pub mod rouge;

pub use bleu::{bleu4, corpus_bleu4};
pub use cider::{cider_d, CiderScores};
pub use meteor::meteor_lite;
pub use ngram::words;
pub use report::{corpus_evaluate, exact_match_rate, Means, MetricReport, Prediction, Reference, SampleScores};
pub use rouge::{lcs_len, rouge_l};
