use std::fmt::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::config::TrainConfig;
use super::data::{step_rng, BatchOrder, TrainData};
use super::eval::{predict, references};
use super::optim::{clip, global_norm, learning_rate, Adam};
use crate::error::{IdcError, Result};
use crate::metrics::corpus_evaluate;
use crate::model::{DecodeMode, IdcModel, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ValRecord {
    pub step: usize,
    pub cider: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub config: TrainConfig,
    pub model: IdcModel<S>,
    pub losses: Vec<StepRecord>,
    pub val: Vec<ValRecord>,
}

impl<S> TrainOutcome<S> {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().map_or(f64::NAN, |r| r.loss)
    }

    /// `step,lr,loss,grad_norm`, one row per step; the grad norm is taken
    /// before clipping.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,lr,loss,grad_norm\n");
        for r in &self.losses {
            writeln!(out, "{},{:e},{:e},{:e}", r.step, r.lr, r.loss, r.grad_norm).unwrap();
        }
        out
    }

    pub fn val_csv(&self) -> String {
        let mut out = String::from("step,val_cider_d\n");
        for r in &self.val {
            writeln!(out, "{},{:.6}", r.step, r.cider).unwrap();
        }
        out
    }
}

/// Model configuration for `cfg` with the vocabulary size filled in.
pub fn resolved_model_config(cfg: &TrainConfig, data: &TrainData) -> ModelConfig {
    ModelConfig {
        vocab_size: data.vocab.len(),
        ..cfg.model.clone()
    }
}

/// Fresh model for `cfg`, with adapters attached and trainable flags set.
pub fn prepare_model<S: Scalar>(cfg: &TrainConfig, data: &TrainData, init: Option<IdcModel<S>>) -> Result<IdcModel<S>> {
    let mcfg = resolved_model_config(cfg, data);
    let mut model = match init {
        Some(m) => {
            if m.config() != &mcfg {
                return Err(IdcError::Config(format!(
                    "initial model config {:?} does not match the run's {:?}",
                    m.config(),
                    mcfg
                )));
            }
            m
        }
        None => IdcModel::new(mcfg, cfg.seed)?,
    };
    let tuned = cfg.tuned_modules();
    if cfg.lora.enabled && model.lora().is_none() {
        let keys: Vec<&str> = tuned.iter().map(|m| m.key()).collect();
        model.apply_lora(cfg.lora.rank, cfg.lora.alpha, &keys, cfg.seed)?;
    }
    model.set_tuned(&tuned);
    Ok(model)
}

/// Fine-tunes on `data`. The run is a pure function of `cfg`, `data` and
/// `init`: batch order and augmentation draws derive from `cfg.seed`.
pub fn train<S: Scalar>(cfg: &TrainConfig, data: &TrainData, init: Option<IdcModel<S>>) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let mut model = prepare_model(cfg, data, init)?;
    let mcfg = model.config().clone();
    for (p, t) in data.train.iter().zip(&data.targets) {
        if t.len() + 1 > mcfg.max_caption_len {
            return Err(IdcError::Record {
                id: p.triplet.id.clone(),
                message: format!(
                    "caption of {} words exceeds max_caption_len {}",
                    t.len(),
                    mcfg.max_caption_len
                ),
            });
        }
    }
    let cached: Option<Vec<Tensor<S>>> = if cfg.augment {
        None
    } else {
        Some(
            data.train
                .par_iter()
                .map(|p| p.input::<S>(&mcfg, None))
                .collect::<Result<_>>()?,
        )
    };
    let mut order = BatchOrder::new(cfg.seed, data.train.len());
    let mut adam = Adam::new(cfg.adam, model.params());
    let warmup = cfg.warmup_steps();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut val = Vec::new();
    let val_pairs = &data.val[..data.val.len().min(cfg.val_limit)];
    for step in 0..cfg.steps {
        let idx = order.batch(step, cfg.batch_size);
        let fresh: Vec<Tensor<S>>;
        let inputs: Vec<&Tensor<S>> = match &cached {
            Some(c) => idx.iter().map(|&i| &c[i]).collect(),
            None => {
                let mut rng = step_rng(cfg.seed, step);
                fresh = idx
                    .iter()
                    .map(|&i| data.train[i].input::<S>(&mcfg, Some((&cfg.augment_config, &mut rng))))
                    .collect::<Result<_>>()?;
                fresh.iter().collect()
            }
        };
        let captions: Vec<&[usize]> = idx.iter().map(|&i| data.targets[i].as_slice()).collect();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, true)?;
        let ce = model.loss(&mut tape, &b, &inputs, &captions)?;
        let loss = tape.value(ce.loss)[0].as_f64();
        let lr = learning_rate(cfg.lr, step, warmup, cfg.steps);
        if !loss.is_finite() {
            return Err(IdcError::NonFinite {
                step,
                lr,
                grad_norm: f64::NAN,
            });
        }
        tape.backward(ce.loss)?;
        let mut grads: Vec<Option<Vec<S>>> = model
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.tensor.requires_grad().then(|| {
                    tape.grad(b.leaf(i))
                        .map(<[S]>::to_vec)
                        .unwrap_or_else(|| vec![S::zero(); p.tensor.numel()])
                })
            })
            .collect();
        drop(tape);
        let grad_norm = global_norm(&grads);
        if !grad_norm.is_finite() {
            return Err(IdcError::NonFinite { step, lr, grad_norm });
        }
        if let Some(c) = cfg.grad_clip {
            clip(&mut grads, grad_norm, c);
        }
        adam.step(model.params_mut(), &grads, lr);
        losses.push(StepRecord {
            step,
            lr,
            loss,
            grad_norm,
        });
        if step % 100 == 0 {
            log::debug!("step {step} loss {loss:.4} lr {lr:.2e} grad-norm {grad_norm:.3}");
        }
        if cfg.val_every > 0 && (step + 1) % cfg.val_every == 0 && !val_pairs.is_empty() {
            let preds = predict(&model, &data.vocab, val_pairs, DecodeMode::Greedy, None)?;
            let cider = corpus_evaluate(&preds, &references(val_pairs))?.overall.cider;
            log::info!("step {} val CIDEr-D {cider:.4}", step + 1);
            val.push(ValRecord { step: step + 1, cider });
        }
    }
    Ok(TrainOutcome {
        config: cfg.clone(),
        model,
        losses,
        val,
    })
}
