use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{EncoderMode, ModelConfig, ModuleKind, LAYER_NORM_EPS};
use super::generate::{argmax, log_softmax, Hypothesis, StepLogits};
use super::input::patchify;
use super::params::{ParamCount, ParamRole, ParamStore};
use crate::dataset::vocab::{BOS, EOS, PAD};
use crate::error::{IdcError, Result};
use crate::imaging::Raster;
use crate::scalar::Scalar;
use crate::tensor::{AttentionSpec, CrossEntropy, Tape, Tensor, Var};

const INIT_STD: f64 = 0.02;
/// Queries and stream ids start at unit scale so they stay distinguishable
/// next to the attention outputs added onto them.
const EMBED_STD: f64 = 1.0;

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    /// (A, B) adapter indices for the Q, K and V weights.
    lora: [Option<(usize, usize)>; 3],
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    attn: Attn,
    cross: Option<(Norm, Attn)>,
    ln_mlp: Norm,
    up: Linear,
    down: Linear,
}

#[derive(Clone, Debug)]
struct Layout {
    patch: Linear,
    pos: usize,
    vit: Vec<Block>,
    vit_ln: Norm,
    stream: Option<usize>,
    queries: usize,
    qformer: Vec<Block>,
    q_ln: Norm,
    tok: usize,
    decoder: Vec<Block>,
    dec_ln: Norm,
    out: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<ModuleKind>,
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

struct Init<'a, S> {
    store: &'a mut ParamStore<S>,
    rng: ChaCha8Rng,
    module: ModuleKind,
}

impl<S: Scalar> Init<'_, S> {
    fn add(&mut self, name: String, shape: &[usize], data: Vec<S>) -> usize {
        let t = Tensor::new(shape, data).expect("init shape").with_requires_grad(true);
        self.store.push(name, self.module, ParamRole::Base, t)
    }

    fn normal(&mut self, name: String, shape: &[usize]) -> usize {
        self.normal_std(name, shape, INIT_STD)
    }

    fn normal_std(&mut self, name: String, shape: &[usize], std: f64) -> usize {
        let dist = Normal::new(0.0, std).unwrap();
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::of(dist.sample(&mut self.rng))).collect();
        self.add(name, shape, data)
    }

    fn filled(&mut self, name: String, shape: &[usize], v: f64) -> usize {
        let n = shape.iter().product();
        self.add(name, shape, vec![S::of(v); n])
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        Linear {
            w: self.normal(format!("{name}.w"), &[din, dout]),
            b: self.filled(format!("{name}.b"), &[dout], 0.0),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.filled(format!("{name}.g"), &[d], 1.0),
            b: self.filled(format!("{name}.b"), &[d], 0.0),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
            lora: [None; 3],
        }
    }

    fn block(&mut self, name: &str, d: usize, hidden: usize, cross: bool) -> Block {
        Block {
            ln1: self.norm(&format!("{name}.ln1"), d),
            attn: self.attn(&format!("{name}.attn"), d),
            cross: cross.then(|| {
                (
                    self.norm(&format!("{name}.ln_cross"), d),
                    self.attn(&format!("{name}.cross"), d),
                )
            }),
            ln_mlp: self.norm(&format!("{name}.ln_mlp"), d),
            up: self.linear(&format!("{name}.mlp.up"), d, hidden),
            down: self.linear(&format!("{name}.mlp.down"), hidden, d),
        }
    }
}

/// Parameters of a model recorded on one tape. `eff` holds the weight each
/// op should use (LoRA-merged for adapted projections); `leaves` holds the
/// raw parameter leaves gradients are read from.
pub struct Bound {
    leaves: Vec<Var>,
    eff: Vec<Var>,
}

impl Bound {
    pub fn leaf(&self, param: usize) -> Var {
        self.leaves[param]
    }
}

/// ViT encoder, QFormer and causal decoder.
#[derive(Clone, Debug)]
pub struct IdcModel<S> {
    config: ModelConfig,
    params: ParamStore<S>,
    layout: Layout,
    lora: Option<LoraConfig>,
    positions: Vec<S>,
}

/// Sinusoidal table `[len, d]`: sin on even columns, cos on odd ones.
pub fn sinusoid_table<S: Scalar>(len: usize, d: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(len * d);
    for p in 0..len {
        for j in 0..d {
            let freq = 10000f64.powf(-((j / 2 * 2) as f64) / d as f64);
            let a = p as f64 * freq;
            out.push(S::of(if j % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    out
}

/// Initial value of the learned patch positions: a 2-D sinusoid over the
/// `per_side x per_side` grid, row-major. Dimensions `4i, 4i+1` carry the row
/// and `4i+2, 4i+3` the column at frequency `100^(-4i/d)`.
pub fn patch_position_table(per_side: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(per_side * per_side * d);
    for r in 0..per_side {
        for c in 0..per_side {
            for j in 0..d {
                let coord = if (j / 2) % 2 == 0 { r } else { c };
                let a = coord as f64 * 100f64.powf(-((j / 4 * 4) as f64) / d as f64);
                out.push(if j % 2 == 0 { a.sin() } else { a.cos() });
            }
        }
    }
    out
}

impl<S: Scalar> IdcModel<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let hidden = d * config.mlp_ratio;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            module: ModuleKind::Vit,
        };
        let patch = init.linear("vit.patch", config.patch_dim(), d);
        let per_side = config.image_side / config.patch_side;
        let table = patch_position_table(per_side, d).into_iter().map(S::of).collect();
        let pos = init.add("vit.pos".into(), &[config.n_patches(), d], table);
        let vit = (0..config.vit_layers)
            .map(|i| init.block(&format!("vit.block{i}"), d, hidden, false))
            .collect();
        let vit_ln = init.norm("vit.ln_final", d);
        let stream = (config.encoder_mode == EncoderMode::TwoStream)
            .then(|| init.normal_std("vit.stream".into(), &[2, d], EMBED_STD));

        init.module = ModuleKind::Qformer;
        let queries = init.normal_std("qformer.queries".into(), &[config.n_queries, d], EMBED_STD);
        let qformer = (0..config.qformer_layers)
            .map(|i| init.block(&format!("qformer.block{i}"), d, hidden, true))
            .collect();
        let q_ln = init.norm("qformer.ln_final", d);

        init.module = ModuleKind::Lm;
        let tok = init.normal("lm.tok".into(), &[config.vocab_size, d]);
        let decoder = (0..config.decoder_layers)
            .map(|i| init.block(&format!("lm.block{i}"), d, hidden, true))
            .collect();
        let dec_ln = init.norm("lm.ln_final", d);
        let out = init.linear("lm.out", d, config.vocab_size);

        let positions = sinusoid_table(config.max_caption_len, d);
        Ok(IdcModel {
            layout: Layout {
                patch,
                pos,
                vit,
                vit_ln,
                stream,
                queries,
                qformer,
                q_ln,
                tok,
                decoder,
                dec_ln,
                out,
            },
            config,
            params,
            lora: None,
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn lora(&self) -> Option<&LoraConfig> {
        self.lora.as_ref()
    }

    fn attn_layers_mut(&mut self, module: ModuleKind) -> Vec<&mut Attn> {
        let blocks = match module {
            ModuleKind::Vit => &mut self.layout.vit,
            ModuleKind::Qformer => &mut self.layout.qformer,
            ModuleKind::Lm => &mut self.layout.decoder,
        };
        let mut out = Vec::new();
        for b in blocks.iter_mut() {
            out.push(&mut b.attn);
            if let Some((_, c)) = b.cross.as_mut() {
                out.push(c);
            }
        }
        out
    }

    /// Attention layers (self and cross) in a module.
    pub fn attention_layers(&self, module: ModuleKind) -> usize {
        let blocks = match module {
            ModuleKind::Vit => &self.layout.vit,
            ModuleKind::Qformer => &self.layout.qformer,
            ModuleKind::Lm => &self.layout.decoder,
        };
        blocks.iter().map(|b| 1 + b.cross.is_some() as usize).sum()
    }

    /// Attaches rank-`rank` adapters to the Q, K and V projections of every
    /// attention layer in `targets`. `B` starts at zero, so outputs are
    /// unchanged. Base weights are frozen and the new adapters are trainable.
    pub fn apply_lora(&mut self, rank: usize, alpha: f64, targets: &[&str], seed: u64) -> Result<()> {
        if rank == 0 {
            return Err(IdcError::InvalidArgument("LoRA rank must be at least 1".into()));
        }
        if self.lora.is_some() {
            return Err(IdcError::InvalidArgument("LoRA adapters are already attached".into()));
        }
        let mut modules: Vec<ModuleKind> = targets.iter().map(|t| ModuleKind::from_key(t)).collect::<Result<_>>()?;
        modules.sort();
        modules.dedup();
        if modules.is_empty() {
            return Err(IdcError::InvalidArgument(
                "LoRA needs at least one target module".into(),
            ));
        }
        for p in self.params.iter_mut() {
            p.tensor.set_requires_grad(false);
        }
        let d = self.config.d_model;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut pending = Vec::new();
        for &m in &modules {
            let names = self.attn_prefixes(m);
            for (layer, name) in names.into_iter().enumerate() {
                for (slot, proj) in ["q", "k", "v"].iter().enumerate() {
                    let a: Vec<S> = (0..d * rank).map(|_| S::of(rng.gen_range(-bound..bound))).collect();
                    let a = Tensor::new(&[d, rank], a)?.with_requires_grad(true);
                    let b = Tensor::<S>::zeros(&[rank, d]).with_requires_grad(true);
                    let ai = self
                        .params
                        .push(format!("{name}.{proj}.lora_a"), m, ParamRole::LoraA, a);
                    let bi = self
                        .params
                        .push(format!("{name}.{proj}.lora_b"), m, ParamRole::LoraB, b);
                    pending.push((m, layer, slot, ai, bi));
                }
            }
        }
        for (m, layer, slot, ai, bi) in pending {
            self.attn_layers_mut(m)[layer].lora[slot] = Some((ai, bi));
        }
        self.lora = Some(LoraConfig {
            rank,
            alpha,
            targets: modules,
        });
        Ok(())
    }

    /// Parameter-name prefixes of a module's attention layers, in layer order.
    fn attn_prefixes(&self, module: ModuleKind) -> Vec<String> {
        let ps = &self.params;
        let blocks = match module {
            ModuleKind::Vit => &self.layout.vit,
            ModuleKind::Qformer => &self.layout.qformer,
            ModuleKind::Lm => &self.layout.decoder,
        };
        let prefix = |a: &Attn| {
            let n = &ps.get(a.q.w).name;
            n[..n.len() - ".q.w".len()].to_string()
        };
        let mut out = Vec::new();
        for b in blocks {
            out.push(prefix(&b.attn));
            if let Some((_, c)) = &b.cross {
                out.push(prefix(c));
            }
        }
        out
    }

    /// Sets which modules train. Without LoRA the base weights of `tuned`
    /// modules train; with LoRA only the adapters inside `tuned` modules do.
    pub fn set_tuned(&mut self, tuned: &[ModuleKind]) {
        let lora_on = self.lora.is_some();
        for p in self.params.iter_mut() {
            let on = tuned.contains(&p.module) && (p.role.is_adapter() == lora_on);
            p.tensor.set_requires_grad(on);
        }
    }

    pub fn freeze_all(&mut self) {
        for p in self.params.iter_mut() {
            p.tensor.set_requires_grad(false);
        }
    }

    pub fn count_params(&self, trainable_only: bool) -> ParamCount {
        let mut per_module: BTreeMap<ModuleKind, usize> = ModuleKind::ALL.iter().map(|&m| (m, 0)).collect();
        for p in self.params.iter() {
            if !trainable_only || p.tensor.requires_grad() {
                *per_module.get_mut(&p.module).unwrap() += p.tensor.numel();
            }
        }
        ParamCount {
            total: per_module.values().sum(),
            per_module,
        }
    }

    /// Records every parameter on `tape`. With `track_grad` off nothing on
    /// the tape requires gradient.
    pub fn bind(&self, tape: &mut Tape<S>, track_grad: bool) -> Result<Bound> {
        let leaves: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if track_grad {
                    tape.leaf(&p.tensor)
                } else {
                    tape.frozen_leaf(&p.tensor)
                }
            })
            .collect();
        self.bind_with(tape, leaves)
    }

    /// Uses caller-recorded leaves, one per parameter in store order.
    pub fn bind_with(&self, tape: &mut Tape<S>, leaves: Vec<Var>) -> Result<Bound> {
        if leaves.len() != self.params.len() {
            return Err(IdcError::InvalidArgument(format!(
                "{} leaves for {} parameters",
                leaves.len(),
                self.params.len()
            )));
        }
        let mut eff = leaves.clone();
        if let Some(lora) = &self.lora {
            let scale = S::of(lora.scale());
            let blocks = self
                .layout
                .vit
                .iter()
                .chain(&self.layout.qformer)
                .chain(&self.layout.decoder);
            for b in blocks {
                for attn in std::iter::once(&b.attn).chain(b.cross.as_ref().map(|(_, c)| c)) {
                    for (lin, ad) in [attn.q, attn.k, attn.v].iter().zip(&attn.lora) {
                        if let Some((a, bb)) = ad {
                            let delta = tape.matmul(leaves[*a], leaves[*bb])?;
                            let delta = tape.scale(delta, scale);
                            eff[lin.w] = tape.add(leaves[lin.w], delta)?;
                        }
                    }
                }
            }
        }
        Ok(Bound { leaves, eff })
    }

    fn linear(&self, tape: &mut Tape<S>, b: &Bound, x: Var, l: Linear) -> Result<Var> {
        let y = tape.matmul(x, b.eff[l.w])?;
        tape.add_row(y, b.eff[l.b])
    }

    fn norm(&self, tape: &mut Tape<S>, b: &Bound, x: Var, n: Norm) -> Result<Var> {
        tape.layer_norm(x, b.eff[n.g], b.eff[n.b], S::of(LAYER_NORM_EPS))
    }

    fn attend(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        a: &Attn,
        xq: Var,
        xkv: Var,
        batch: usize,
        causal: bool,
    ) -> Result<Var> {
        let q = self.linear(tape, b, xq, a.q)?;
        let k = self.linear(tape, b, xkv, a.k)?;
        let v = self.linear(tape, b, xkv, a.v)?;
        let spec = AttentionSpec {
            heads: self.config.n_heads,
            batch,
            causal,
        };
        let o = tape.attention(q, k, v, spec)?;
        self.linear(tape, b, o, a.o)
    }

    fn block(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        blk: &Block,
        x: Var,
        batch: usize,
        causal: bool,
        memory: Option<Var>,
    ) -> Result<Var> {
        let h = self.norm(tape, b, x, blk.ln1)?;
        let h = self.attend(tape, b, &blk.attn, h, h, batch, causal)?;
        let mut x = tape.add(x, h)?;
        if let Some((ln, cross)) = &blk.cross {
            let mem = memory.ok_or_else(|| IdcError::InvalidArgument("cross-attention block without memory".into()))?;
            let h = self.norm(tape, b, x, *ln)?;
            let h = self.attend(tape, b, cross, h, mem, batch, false)?;
            x = tape.add(x, h)?;
        }
        let h = self.norm(tape, b, x, blk.ln_mlp)?;
        let h = self.linear(tape, b, h, blk.up)?;
        let h = tape.gelu(h);
        let h = self.linear(tape, b, h, blk.down)?;
        tape.add(x, h)
    }

    /// Query embeddings `[batch * n_queries, d_model]` for prepared inputs
    /// (see [`super::input::prepare_pair`]).
    pub fn encode(&self, tape: &mut Tape<S>, b: &Bound, inputs: &[&Tensor<S>]) -> Result<Var> {
        let cfg = &self.config;
        let batch = inputs.len();
        let vt = cfg.vision_tokens();
        let pd = cfg.patch_dim();
        if batch == 0 {
            return Err(IdcError::InvalidArgument("encode with an empty batch".into()));
        }
        let mut data = Vec::with_capacity(batch * vt * pd);
        for t in inputs {
            if t.shape() != [vt, pd] {
                return Err(IdcError::Shape(format!(
                    "{} encoder input must be [{vt}, {pd}], got {:?}",
                    cfg.encoder_mode,
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        let patches = tape.constant(&[batch * vt, pd], data)?;
        let np = cfg.n_patches();
        let images = batch * vt / np;
        let mut x = self.linear(tape, b, patches, self.layout.patch)?;
        x = tape.add_tiled(x, b.eff[self.layout.pos])?;
        for blk in &self.layout.vit {
            x = self.block(tape, b, blk, x, images, false, None)?;
        }
        x = self.norm(tape, b, x, self.layout.vit_ln)?;
        if let Some(stream) = self.layout.stream {
            let ids: Vec<usize> = (0..2 * np).map(|i| i / np).collect();
            let rows = tape.gather(b.eff[stream], &ids)?;
            x = tape.add_tiled(x, rows)?;
        }
        let mut q = tape.tile_rows(b.eff[self.layout.queries], batch)?;
        for blk in &self.layout.qformer {
            q = self.block(tape, b, blk, q, batch, false, Some(x))?;
        }
        self.norm(tape, b, q, self.layout.q_ln)
    }

    /// Next-token logits `[batch * t, vocab]` for decoder inputs `ids`
    /// (`batch` sequences of length `t`, row-major).
    pub fn decode(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        memory: Var,
        batch: usize,
        ids: &[usize],
        t: usize,
    ) -> Result<Var> {
        let d = self.config.d_model;
        if t == 0 || t > self.config.max_caption_len {
            return Err(IdcError::InvalidArgument(format!(
                "decoder input length {t} outside 1..={}",
                self.config.max_caption_len
            )));
        }
        if ids.len() != batch * t {
            return Err(IdcError::Shape(format!(
                "{} ids for {batch} sequences of {t}",
                ids.len()
            )));
        }
        let mut x = tape.gather(b.eff[self.layout.tok], ids)?;
        let pos = tape.constant(&[t, d], self.positions[..t * d].to_vec())?;
        x = tape.add_tiled(x, pos)?;
        for blk in &self.layout.decoder {
            x = self.block(tape, b, blk, x, batch, true, Some(memory))?;
        }
        x = self.norm(tape, b, x, self.layout.dec_ln)?;
        self.linear(tape, b, x, self.layout.out)
    }

    /// Teacher-forced cross-entropy. Each caption (word ids, no specials) is
    /// fed as `[BOS, w..]` and scored against `[w.., EOS]`.
    pub fn loss(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        inputs: &[&Tensor<S>],
        captions: &[&[usize]],
    ) -> Result<CrossEntropy> {
        if inputs.len() != captions.len() {
            return Err(IdcError::InvalidArgument(format!(
                "{} inputs for {} captions",
                inputs.len(),
                captions.len()
            )));
        }
        let batch = inputs.len();
        let t = captions.iter().map(|c| c.len()).max().unwrap_or(0) + 1;
        if t > self.config.max_caption_len {
            return Err(IdcError::InvalidArgument(format!(
                "caption of {} tokens does not fit max_caption_len {}",
                t - 1,
                self.config.max_caption_len
            )));
        }
        let mut ids = vec![PAD; batch * t];
        let mut targets = vec![PAD; batch * t];
        for (s, cap) in captions.iter().enumerate() {
            ids[s * t] = BOS;
            ids[s * t + 1..s * t + 1 + cap.len()].copy_from_slice(cap);
            targets[s * t..s * t + cap.len()].copy_from_slice(cap);
            targets[s * t + cap.len()] = EOS;
        }
        let memory = self.encode(tape, b, inputs)?;
        let logits = self.decode(tape, b, memory, batch, &ids, t)?;
        tape.cross_entropy(logits, &targets, PAD)
    }

    /// Inference-only encoding of prepared inputs: `[batch * n_queries, d]`.
    pub fn encode_prepared(&self, inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let m = self.encode(&mut tape, &b, inputs)?;
        Ok(tape.to_tensor(m))
    }

    /// Encodes a concatenated-and-resized pair (joint encoder only).
    pub fn encode_joint(&self, pair_input: &Raster) -> Result<Tensor<S>> {
        if self.config.encoder_mode != EncoderMode::Joint {
            return Err(IdcError::Config("encode_joint on a two-stream model".into()));
        }
        let p = patchify(pair_input, &self.config)?;
        self.encode_prepared(&[&p])
    }

    /// Encodes two images of model input size with the shared ViT.
    pub fn encode_two_stream(&self, img_a: &Raster, img_b: &Raster) -> Result<Tensor<S>> {
        if self.config.encoder_mode != EncoderMode::TwoStream {
            return Err(IdcError::Config("encode_two_stream on a joint model".into()));
        }
        let a: Tensor<S> = patchify(img_a, &self.config)?;
        let bb: Tensor<S> = patchify(img_b, &self.config)?;
        let mut data = a.data().to_vec();
        data.extend_from_slice(bb.data());
        let p = Tensor::new(&[2 * self.config.n_patches(), self.config.patch_dim()], data)?;
        self.encode_prepared(&[&p])
    }

    fn check_memory(&self, memory: &Tensor<S>) -> Result<usize> {
        let (nq, d) = (self.config.n_queries, self.config.d_model);
        match memory.shape() {
            [r, c] if *c == d && r % nq == 0 => Ok(r / nq),
            s => Err(IdcError::Shape(format!(
                "query memory must be [k*{nq}, {d}], got {s:?}"
            ))),
        }
    }

    /// Logits for the token after `[BOS] + prefix`, for one sample.
    pub fn decode_step(&self, memory: &Tensor<S>, prefix: &[usize]) -> Result<Vec<S>> {
        if self.check_memory(memory)? != 1 {
            return Err(IdcError::Shape("decode_step takes a single sample's memory".into()));
        }
        if prefix.len() >= self.config.max_caption_len {
            return Err(IdcError::InvalidArgument(format!(
                "prefix of {} tokens is not shorter than max_caption_len {}",
                prefix.len(),
                self.config.max_caption_len
            )));
        }
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(prefix);
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let mem = tape.frozen_leaf(memory);
        let logits = self.decode(&mut tape, &b, mem, 1, &ids, ids.len())?;
        let v = self.config.vocab_size;
        Ok(tape.value(logits)[prefix.len() * v..].to_vec())
    }

    /// Greedy decoding of every sample in `memory` at once. Identical to
    /// per-sample greedy decoding: rows never interact across samples.
    pub fn greedy_batch(&self, memory: &Tensor<S>) -> Result<Vec<Hypothesis>> {
        let batch = self.check_memory(memory)?;
        let v = self.config.vocab_size;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let mem = tape.frozen_leaf(memory);
        let mark = tape.len();
        let mut hyps: Vec<Hypothesis> = (0..batch).map(|_| Hypothesis::default()).collect();
        let mut done = vec![false; batch];
        let mut seqs: Vec<Vec<usize>> = vec![vec![BOS]; batch];
        for t in 1..=self.config.max_caption_len {
            if done.iter().all(|&d| d) {
                break;
            }
            let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
            let logits = self.decode(&mut tape, &b, mem, batch, &ids, t)?;
            let lv = tape.value(logits);
            let mut next = Vec::with_capacity(batch);
            for s in 0..batch {
                let row = &lv[(s * t + t - 1) * v..(s * t + t) * v];
                let row: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
                let lp = log_softmax(&row);
                let tok = argmax(&lp);
                if !done[s] {
                    hyps[s].log_prob += lp[tok];
                    if tok == EOS {
                        done[s] = true;
                        hyps[s].ended = true;
                    } else {
                        hyps[s].tokens.push(tok);
                    }
                }
                next.push(if done[s] { PAD } else { tok });
            }
            for (s, tok) in next.into_iter().enumerate() {
                seqs[s].push(tok);
            }
            tape.truncate(mark);
        }
        Ok(hyps)
    }

    /// Per-sample decoding context for [`super::generate::generate`].
    pub fn session<'m>(&'m self, memory: &'m Tensor<S>) -> Session<'m, S> {
        Session { model: self, memory }
    }
}

pub struct Session<'m, S> {
    model: &'m IdcModel<S>,
    memory: &'m Tensor<S>,
}

impl<S: Scalar> StepLogits for Session<'_, S> {
    fn step_logits(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self
            .model
            .decode_step(self.memory, prefix)?
            .into_iter()
            .map(|x| x.as_f64())
            .collect())
    }
}
