use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares tape gradients of `f` against central differences with step `h`.
///
/// `f` records a scalar loss given one leaf per entry of `params`. The error
/// of an entry is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
/// `stride` > 1 checks every `stride`-th element of each parameter only.
pub fn grad_check<S, F>(f: F, params: &[Tensor<S>], h: f64, tol: f64, stride: usize) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<S>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.frozen_leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss)[0].as_f64())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| {
            let p = p.clone().with_requires_grad(true);
            tape.leaf(&p)
        })
        .collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut work: Vec<Tensor<S>> = params.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let stride = stride.max(1);
    for (pi, var) in vars.iter().enumerate() {
        let n = params[pi].numel();
        let analytic: Vec<f64> = match tape.grad(*var) {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; n],
        };
        for ei in (0..n).step_by(stride) {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + S::of(h);
            let up = eval(&work)?;
            work[pi].data_mut()[ei] = orig - S::of(h);
            let down = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ei];
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            let rel = (a - numeric).abs() / denom;
            checked += 1;
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((pi, ei));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        checked,
        tol,
        passed: max_rel < tol,
    })
}
