use crate::dataset::{detokenize, Vocab};
use crate::error::Result;
use crate::imaging::AugmentConfig;
use crate::metrics::{corpus_evaluate, MetricReport, Prediction, Reference};
use crate::model::{generate, DecodeMode, IdcModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::data::{step_rng, LoadedPair};

/// Samples encoded together during greedy decoding.
pub const EVAL_BATCH: usize = 32;

/// Captions for `pairs`. With `augment` set, both images of every pair are
/// perturbed first, drawing from a stream keyed by the seed and the pair's
/// position.
pub fn predict<S: Scalar>(
    model: &IdcModel<S>,
    vocab: &Vocab,
    pairs: &[LoadedPair],
    mode: DecodeMode,
    augment: Option<(&AugmentConfig, u64)>,
) -> Result<Vec<Prediction>> {
    let cfg = model.config();
    let inputs = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| match augment {
            None => p.input::<S>(cfg, None),
            Some((a, seed)) => p.input::<S>(cfg, Some((a, &mut step_rng(seed, i)))),
        })
        .collect::<Result<Vec<Tensor<S>>>>()?;
    let mut out = Vec::with_capacity(pairs.len());
    for (chunk, pchunk) in inputs.chunks(EVAL_BATCH).zip(pairs.chunks(EVAL_BATCH)) {
        let refs: Vec<&Tensor<S>> = chunk.iter().collect();
        let memory = model.encode_prepared(&refs)?;
        let hyps = match mode {
            DecodeMode::Greedy => model.greedy_batch(&memory)?,
            DecodeMode::Beam(_) => {
                let d = cfg.d_model;
                let nq = cfg.n_queries;
                (0..chunk.len())
                    .map(|s| {
                        let rows = memory.data()[s * nq * d..(s + 1) * nq * d].to_vec();
                        let m = Tensor::new(&[nq, d], rows)?;
                        generate(&mut model.session(&m), mode, cfg.max_caption_len)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        for (h, p) in hyps.iter().zip(pchunk) {
            out.push(Prediction {
                id: p.triplet.id.clone(),
                caption: detokenize(&h.tokens, vocab),
            });
        }
    }
    Ok(out)
}

pub fn references(pairs: &[LoadedPair]) -> Vec<Reference> {
    pairs.iter().map(|p| Reference::from(&p.triplet)).collect()
}

/// Predicts and scores in one go.
pub fn evaluate<S: Scalar>(
    model: &IdcModel<S>,
    vocab: &Vocab,
    pairs: &[LoadedPair],
    mode: DecodeMode,
) -> Result<(Vec<Prediction>, MetricReport)> {
    let preds = predict(model, vocab, pairs, mode, None)?;
    let report = corpus_evaluate(&preds, &references(pairs))?;
    Ok((preds, report))
}
