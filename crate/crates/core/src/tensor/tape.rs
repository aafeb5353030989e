use std::sync::Arc;

use super::kernels::{self, add_into, matmul, matmul_nt, matmul_tn, transpose};
use super::{check_shape, Tensor};
use crate::error::{IdcError, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Multi-head scaled dot-product attention over `batch` independent sequences.
///
/// Queries are `[batch * tq, d]`, keys and values `[batch * tk, d]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionSpec {
    pub heads: usize,
    pub batch: usize,
    pub causal: bool,
}

/// Result of [`Tape::cross_entropy`].
#[derive(Clone, Copy, Debug)]
pub struct CrossEntropy {
    pub loss: Var,
    /// Number of non-pad positions averaged over.
    pub counted: usize,
    /// Every target was padding; the loss is defined as zero.
    pub all_pad: bool,
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddRow(Var, Var),
    AddTiled(Var, Var),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad: usize,
        probs: Vec<S>,
        counted: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttentionSpec,
        probs: Vec<S>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    TileRows(Var),
    ConcatSeq {
        a: Var,
        b: Var,
        batch: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Reshape(Var),
}

struct Node<S> {
    shape: Vec<usize>,
    value: Arc<Vec<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Linear record of forward operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// [`Tape::backward`] walks the nodes once in reverse and adds the gradient of
/// the loss into the buffers of leaves that require it. Calling it again
/// without [`Tape::zero_grad`] accumulates.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    leaf_grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / cols, cols)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.push_shared(shape, Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, shape: Vec<usize>, value: Arc<Vec<S>>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Snapshot of a node's value as a standalone tensor (shares the buffer).
    pub fn to_tensor(&self, v: Var) -> Tensor<S> {
        let n = self.node(v);
        Tensor::from_shared(n.shape.clone(), n.value.clone())
    }

    /// Records a tensor as a leaf; gradient tracking follows the tensor's flag.
    pub fn leaf(&mut self, t: &Tensor<S>) -> Var {
        self.push_shared(t.shape().to_vec(), t.shared().clone(), Op::Leaf, t.requires_grad())
    }

    /// Records a tensor as a leaf that never receives gradient.
    pub fn frozen_leaf(&mut self, t: &Tensor<S>) -> Var {
        self.push_shared(t.shape().to_vec(), t.shared().clone(), Op::Leaf, false)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<S>) -> Result<Var> {
        check_shape(shape, data.len())?;
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn variable(&mut self, shape: &[usize], data: Vec<S>) -> Result<Var> {
        check_shape(shape, data.len())?;
        Ok(self.push(shape.to_vec(), data, Op::Leaf, true))
    }

    /// Gradient accumulated into a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.leaf_grads.truncate(len);
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(IdcError::Shape(format!("{what} must be 2-D, got {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(IdcError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul lhs")?;
        let (k2, n) = self.matrix(b, "matmul rhs")?;
        if k != k2 {
            return Err(IdcError::Shape(format!(
                "matmul of [{m}, {k}] by [{k2}, {n}]: inner dimensions differ"
            )));
        }
        let out = matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), rg)
    }

    /// Adds a `d`-vector to every row of `a` (bias broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, d) = rows_cols(self.shape(a));
        if self.value(row).len() != d {
            return Err(IdcError::Shape(format!(
                "add_row: row of {} elements for rows of width {d}",
                self.value(row).len()
            )));
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks(d)
            .flat_map(|xs| xs.iter().zip(r).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.rg(&[a, row]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow(a, row), rg))
    }

    /// `a[times * r, d] + tile(t[r, d])`: adds a per-position table to each
    /// sequence of a batch.
    pub fn add_tiled(&mut self, a: Var, t: Var) -> Result<Var> {
        let (rows, d) = self.matrix(a, "add_tiled input")?;
        let (r, d2) = self.matrix(t, "add_tiled table")?;
        if d != d2 || rows % r != 0 {
            return Err(IdcError::Shape(format!(
                "add_tiled: [{rows}, {d}] is not a whole number of [{r}, {d2}] blocks"
            )));
        }
        let tv = self.value(t);
        let out = self
            .value(a)
            .chunks(r * d)
            .flat_map(|blk| blk.iter().zip(tv).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.rg(&[a, t]);
        Ok(self.push(vec![rows, d], out, Op::AddTiled(a, t), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| gelu_fwd(v)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Gelu(x), rg)
    }

    /// Softmax along `axis`, with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(IdcError::InvalidArgument(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![S::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mut mx = S::neg_infinity();
                for j in 0..n {
                    mx = mx.max(xv[at(j)]);
                }
                let mut total = S::zero();
                for j in 0..n {
                    let e = (xv[at(j)] - mx).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Softmax { x, outer, n, inner }, rg))
    }

    /// Normalizes each row (last axis) to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let (rows, d) = rows_cols(self.shape(x));
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(IdcError::Shape(format!(
                "layer_norm: gain/bias of {}/{} elements for rows of width {d}",
                self.value(gain).len(),
                self.value(bias).len()
            )));
        }
        let xv = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let dn = S::of(d as f64);
        let mut xhat = vec![S::zero(); rows * d];
        let mut rstd = vec![S::zero(); rows];
        let mut out = vec![S::zero(); rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = kernels::sum(row) / dn;
            let mut var = S::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var /= dn;
            let rs = S::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        let (xhat, rstd) = if rg { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[T, V]`, skipping positions whose target is `pad`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad: usize) -> Result<CrossEntropy> {
        let (t, v) = self.matrix(logits, "cross_entropy logits")?;
        if targets.len() != t {
            return Err(IdcError::Shape(format!(
                "cross_entropy: {} targets for {t} rows of logits",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&id| id != pad && id >= v) {
            return Err(IdcError::InvalidArgument(format!(
                "target id {bad} outside vocabulary of {v}"
            )));
        }
        let lv = self.value(logits);
        let mut probs = vec![S::zero(); t * v];
        let mut total = S::zero();
        let mut counted = 0;
        for (r, &tgt) in targets.iter().enumerate() {
            if tgt == pad {
                continue;
            }
            counted += 1;
            let row = &lv[r * v..(r + 1) * v];
            let mx = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let mut z = S::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                probs[r * v + j] = e;
                z += e;
            }
            for p in &mut probs[r * v..(r + 1) * v] {
                *p /= z;
            }
            total += mx + z.ln() - row[tgt];
        }
        let all_pad = counted == 0;
        let loss = if all_pad {
            S::zero()
        } else {
            total / S::of(counted as f64)
        };
        let rg = self.rg(&[logits]);
        let var = self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad,
                probs: if rg { probs } else { Vec::new() },
                counted,
            },
            rg,
        );
        Ok(CrossEntropy {
            loss: var,
            counted,
            all_pad,
        })
    }

    /// Multi-head attention; the output has the shape of `q`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        let (qr, d) = self.matrix(q, "attention queries")?;
        let (kr, dk) = self.matrix(k, "attention keys")?;
        let (vr, dv) = self.matrix(v, "attention values")?;
        if d != dk || d != dv || kr != vr {
            return Err(IdcError::Shape(format!(
                "attention: q [{qr}, {d}], k [{kr}, {dk}], v [{vr}, {dv}]"
            )));
        }
        let AttentionSpec { heads, batch, causal } = spec;
        if heads == 0 || d % heads != 0 || batch == 0 || qr % batch != 0 || kr % batch != 0 {
            return Err(IdcError::Shape(format!(
                "attention: width {d} / {heads} heads, {qr} query rows and {kr} key rows over batch {batch}"
            )));
        }
        let (tq, tk, hd) = (qr / batch, kr / batch, d / heads);
        if causal && tq != tk {
            return Err(IdcError::Shape(format!(
                "causal attention needs equal query/key lengths, got {tq} and {tk}"
            )));
        }
        let scale = S::one() / S::of(hd as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![S::zero(); qr * d];
        let mut probs = vec![S::zero(); batch * heads * tq * tk];
        for b in 0..batch {
            for h in 0..heads {
                let qh = head_block(qv, b * tq, tq, d, h * hd, hd);
                let kh_t = transpose(&head_block(kv, b * tk, tk, d, h * hd, hd), tk, hd);
                let vh = head_block(vv, b * tk, tk, d, h * hd, hd);
                let mut s = matmul(&qh, &kh_t, tq, hd, tk);
                let p = &mut probs[(b * heads + h) * tq * tk..(b * heads + h + 1) * tq * tk];
                for i in 0..tq {
                    let visible = if causal { i + 1 } else { tk };
                    let row = &mut s[i * tk..(i + 1) * tk];
                    let mut mx = S::neg_infinity();
                    for &x in &row[..visible] {
                        mx = mx.max(x * scale);
                    }
                    let mut z = S::zero();
                    for j in 0..visible {
                        let e = (row[j] * scale - mx).exp();
                        p[i * tk + j] = e;
                        z += e;
                    }
                    for j in 0..visible {
                        p[i * tk + j] /= z;
                    }
                }
                let oh = matmul(p, &vh, tq, tk, hd);
                scatter_head(&mut out, &oh, b * tq, tq, d, h * hd, hd);
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            vec![qr, d],
            out,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs: if rg { probs } else { Vec::new() },
            },
            rg,
        ))
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.matrix(table, "gather table")?;
        if ids.is_empty() {
            return Err(IdcError::InvalidArgument("gather with no ids".into()));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(IdcError::InvalidArgument(format!(
                    "gather id {id} outside table of {vocab} rows"
                )));
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks `times` copies of a matrix vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (r, d) = self.matrix(x, "tile_rows input")?;
        if times == 0 {
            return Err(IdcError::InvalidArgument("tile_rows with zero copies".into()));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(times * r * d);
        for _ in 0..times {
            out.extend_from_slice(xv);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![times * r, d], out, Op::TileRows(x), rg))
    }

    /// Per-sequence concatenation: `[batch*ta, d]` and `[batch*tb, d]` become
    /// `[batch*(ta+tb), d]` with each sequence's `a` rows first.
    pub fn concat_seq(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        let (ar, d) = self.matrix(a, "concat_seq lhs")?;
        let (br, d2) = self.matrix(b, "concat_seq rhs")?;
        if d != d2 || batch == 0 || ar % batch != 0 || br % batch != 0 {
            return Err(IdcError::Shape(format!(
                "concat_seq of [{ar}, {d}] and [{br}, {d2}] over batch {batch}"
            )));
        }
        let (ta, tb) = (ar / batch, br / batch);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity((ar + br) * d);
        for s in 0..batch {
            out.extend_from_slice(&av[s * ta * d..(s + 1) * ta * d]);
            out.extend_from_slice(&bv[s * tb * d..(s + 1) * tb * d]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![ar + br, d], out, Op::ConcatSeq { a, b, batch }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, d) = self.matrix(x, "slice_rows input")?;
        if len == 0 || start + len > r {
            return Err(IdcError::Shape(format!(
                "slice_rows [{start}, {}) of a {r}-row matrix",
                start + len
            )));
        }
        let out = self.value(x)[start * d..(start + len) * d].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![len, d], out, Op::SliceRows { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = kernels::sum(self.value(x));
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    /// Same buffer, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape, self.value(x).len())?;
        let value = self.node(x).value.clone();
        let rg = self.rg(&[x]);
        Ok(self.push_shared(shape.to_vec(), value, Op::Reshape(x), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(IdcError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, g, &mut grads);
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Vec<S>>], to: Var, g: Vec<S>) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => add_into(acc, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&mut self, i: usize, g: Vec<S>, grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => match &mut self.leaf_grads[i] {
                Some(acc) => add_into(acc, &g),
                slot @ None => *slot = Some(g),
            },
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let da = matmul_nt(&g, self.value(*b), m, n, k);
                    self.send(grads, *a, da);
                }
                if self.wants(*b) {
                    let db = matmul_tn(self.value(*a), &g, m, k, n);
                    self.send(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(b) {
                    self.send(grads, b, g.clone());
                }
                self.send(grads, a, g);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(b) {
                    let neg = g.iter().map(|&x| -x).collect();
                    self.send(grads, b, neg);
                }
                self.send(grads, a, g);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    let da = g.iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
                    self.send(grads, a, da);
                }
                if self.wants(b) {
                    let db = g.iter().zip(self.value(a)).map(|(&x, &y)| x * y).collect();
                    self.send(grads, b, db);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                let a = *a;
                let da = g.iter().map(|&x| x * c).collect();
                self.send(grads, a, da);
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                if self.wants(row) {
                    let d = self.value(row).len();
                    let mut dr = vec![S::zero(); d];
                    for chunk in g.chunks(d) {
                        add_into(&mut dr, chunk);
                    }
                    self.send(grads, row, dr);
                }
                self.send(grads, a, g);
            }
            Op::AddTiled(a, t) => {
                let (a, t) = (*a, *t);
                if self.wants(t) {
                    let blk = self.value(t).len();
                    let mut dt = vec![S::zero(); blk];
                    for chunk in g.chunks(blk) {
                        add_into(&mut dt, chunk);
                    }
                    self.send(grads, t, dt);
                }
                self.send(grads, a, g);
            }
            Op::Gelu(x) => {
                let x = *x;
                let dx = g
                    .iter()
                    .zip(self.value(x))
                    .map(|(&gi, &xi)| gi * gelu_grad(xi))
                    .collect();
                self.send(grads, x, dx);
            }
            Op::Softmax { x, outer, n, inner } => {
                let (x, outer, n, inner) = (*x, *outer, *n, *inner);
                let y = &node.value;
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + ii;
                        let mut dot = S::zero();
                        for j in 0..n {
                            dot += g[at(j)] * y[at(j)];
                        }
                        for j in 0..n {
                            dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                self.send(grads, x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let d = self.value(gain).len();
                let rows = rstd.len();
                let gv = self.value(gain);
                if self.wants(gain) {
                    let mut dg = vec![S::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                    self.send(grads, gain, dg);
                }
                if self.wants(bias) {
                    let mut db = vec![S::zero(); d];
                    for chunk in g.chunks(d) {
                        add_into(&mut db, chunk);
                    }
                    self.send(grads, bias, db);
                }
                if self.wants(x) {
                    let dn = S::of(d as f64);
                    let mut dx = vec![S::zero(); rows * d];
                    let mut dxh = vec![S::zero(); d];
                    for r in 0..rows {
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        for j in 0..d {
                            let v = g[r * d + j] * gv[j];
                            dxh[j] = v;
                            m1 += v;
                            m2 += v * xhat[r * d + j];
                        }
                        m1 /= dn;
                        m2 /= dn;
                        for j in 0..d {
                            dx[r * d + j] = rstd[r] * (dxh[j] - m1 - xhat[r * d + j] * m2);
                        }
                    }
                    self.send(grads, x, dx);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                pad,
                probs,
                counted,
            } => {
                let logits = *logits;
                if *counted == 0 {
                    return;
                }
                let v = self.shape(logits)[1];
                let coef = g[0] / S::of(*counted as f64);
                let mut dl = vec![S::zero(); probs.len()];
                for (r, &tgt) in targets.iter().enumerate() {
                    if tgt == *pad {
                        continue;
                    }
                    for j in 0..v {
                        dl[r * v + j] = probs[r * v + j] * coef;
                    }
                    dl[r * v + tgt] -= coef;
                }
                self.send(grads, logits, dl);
            }
            Op::Attention { q, k, v, spec, probs } => {
                let (q, k, v) = (*q, *k, *v);
                let (qr, d) = (self.shape(q)[0], self.shape(q)[1]);
                let kr = self.shape(k)[0];
                let (batch, heads) = (spec.batch, spec.heads);
                let (tq, tk, hd) = (qr / batch, kr / batch, d / heads);
                let scale = S::one() / S::of(hd as f64).sqrt();
                let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
                let (wq, wk, wv) = (self.wants(q), self.wants(k), self.wants(v));
                let mut dq = if wq { vec![S::zero(); qr * d] } else { Vec::new() };
                let mut dk = if wk { vec![S::zero(); kr * d] } else { Vec::new() };
                let mut dv = if wv { vec![S::zero(); kr * d] } else { Vec::new() };
                for b in 0..batch {
                    for h in 0..heads {
                        let p = &probs[(b * heads + h) * tq * tk..(b * heads + h + 1) * tq * tk];
                        let go = head_block(&g, b * tq, tq, d, h * hd, hd);
                        if wv {
                            let dvh = matmul_tn(p, &go, tq, tk, hd);
                            scatter_head(&mut dv, &dvh, b * tk, tk, d, h * hd, hd);
                        }
                        if !(wq || wk) {
                            continue;
                        }
                        let vh = head_block(vv, b * tk, tk, d, h * hd, hd);
                        let dp = matmul_nt(&go, &vh, tq, hd, tk);
                        let mut ds = vec![S::zero(); tq * tk];
                        for i in 0..tq {
                            let mut dot = S::zero();
                            for j in 0..tk {
                                dot += dp[i * tk + j] * p[i * tk + j];
                            }
                            for j in 0..tk {
                                ds[i * tk + j] = p[i * tk + j] * (dp[i * tk + j] - dot) * scale;
                            }
                        }
                        if wq {
                            let kh = head_block(kv, b * tk, tk, d, h * hd, hd);
                            let dqh = matmul(&ds, &kh, tq, tk, hd);
                            scatter_head(&mut dq, &dqh, b * tq, tq, d, h * hd, hd);
                        }
                        if wk {
                            let qh = head_block(qv, b * tq, tq, d, h * hd, hd);
                            let dkh = matmul_tn(&ds, &qh, tq, tk, hd);
                            scatter_head(&mut dk, &dkh, b * tk, tk, d, h * hd, hd);
                        }
                    }
                }
                if wq {
                    self.send(grads, q, dq);
                }
                if wk {
                    self.send(grads, k, dk);
                }
                if wv {
                    self.send(grads, v, dv);
                }
            }
            Op::Gather { table, ids } => {
                let table = *table;
                let (rows, d) = (self.shape(table)[0], self.shape(table)[1]);
                let mut dt = vec![S::zero(); rows * d];
                for (i, &id) in ids.iter().enumerate() {
                    add_into(&mut dt[id * d..(id + 1) * d], &g[i * d..(i + 1) * d]);
                }
                self.send(grads, table, dt);
            }
            Op::TileRows(x) => {
                let x = *x;
                let blk = self.value(x).len();
                let mut dx = vec![S::zero(); blk];
                for chunk in g.chunks(blk) {
                    add_into(&mut dx, chunk);
                }
                self.send(grads, x, dx);
            }
            Op::ConcatSeq { a, b, batch } => {
                let (a, b, batch) = (*a, *b, *batch);
                let d = self.shape(a)[1];
                let ta = self.shape(a)[0] / batch;
                let tb = self.shape(b)[0] / batch;
                let mut da = Vec::with_capacity(batch * ta * d);
                let mut db = Vec::with_capacity(batch * tb * d);
                for s in 0..batch {
                    let base = s * (ta + tb) * d;
                    da.extend_from_slice(&g[base..base + ta * d]);
                    db.extend_from_slice(&g[base + ta * d..base + (ta + tb) * d]);
                }
                self.send(grads, a, da);
                self.send(grads, b, db);
            }
            Op::SliceRows { x, start } => {
                let (x, start) = (*x, *start);
                let d = self.shape(x)[1];
                let mut dx = vec![S::zero(); self.value(x).len()];
                dx[start * d..start * d + g.len()].copy_from_slice(&g);
                self.send(grads, x, dx);
            }
            Op::Sum(x) => {
                let x = *x;
                let dx = vec![g[0]; self.value(x).len()];
                self.send(grads, x, dx);
            }
            Op::Reshape(x) => {
                let x = *x;
                self.send(grads, x, g);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu_fwd<S: Scalar>(x: S) -> S {
    let inner = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    S::of(0.5) * x * (S::one() + inner.tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let inner = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = S::of(GELU_C) * (S::one() + S::of(3.0 * GELU_A) * x * x);
    S::of(0.5) * (S::one() + t) + S::of(0.5) * x * (S::one() - t * t) * dinner
}

/// Copies rows `[row0, row0+rows)` and columns `[col0, col0+width)` out of a
/// `[_, d]` matrix.
fn head_block<S: Scalar>(m: &[S], row0: usize, rows: usize, d: usize, col0: usize, width: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(rows * width);
    for r in row0..row0 + rows {
        out.extend_from_slice(&m[r * d + col0..r * d + col0 + width]);
    }
    out
}

fn scatter_head<S: Scalar>(m: &mut [S], block: &[S], row0: usize, rows: usize, d: usize, col0: usize, width: usize) {
    for r in 0..rows {
        let dst = &mut m[(row0 + r) * d + col0..(row0 + r) * d + col0 + width];
        add_into(dst, &block[r * width..(r + 1) * width]);
    }
}
