use std::f64::consts::PI;

use super::config::AdamConfig;
use crate::model::ParamStore;
use crate::scalar::Scalar;

/// Linear warmup over `warmup` steps, then cosine decay to zero at `total`.
/// `step` counts from 0.
pub fn learning_rate(base: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}

/// Adam with bias correction. Only parameters handed a gradient move; the
/// moments of the others stay untouched.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    cfg: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<S>) -> Self {
        Adam {
            cfg,
            m: params.iter().map(|p| vec![S::zero(); p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.tensor.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// `grads[i]` is the gradient of parameter `i`, or `None` for frozen ones.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &[Option<Vec<S>>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (S::of(self.cfg.beta1), S::of(self.cfg.beta2));
        let c1 = S::one() - b1.powi(self.t);
        let c2 = S::one() - b2.powi(self.t);
        let (lr, eps) = (S::of(lr), S::of(self.cfg.eps));
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.get_mut(i).tensor.data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (S::one() - b1) * g[j];
                v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                w[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Euclidean norm over every gradient present.
pub fn global_norm<S: Scalar>(grads: &[Option<Vec<S>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
pub fn clip<S: Scalar>(grads: &mut [Option<Vec<S>>], norm: f64, max_norm: f64) {
    if norm > max_norm {
        let f = S::of(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= f;
            }
        }
    }
}
