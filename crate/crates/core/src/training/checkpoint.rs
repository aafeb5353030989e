//! `IDCK` checkpoint container: magic, format version (u32 LE), header
//! length (u64 LE), JSON header, then every tensor listed in the header as
//! little-endian f64, in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::dataset::Vocab;
use crate::error::{IdcError, Result};
use crate::model::{IdcModel, LoraConfig, ModelConfig, ModuleKind, ParamRole};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"IDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Every parameter, adapters included.
    Full,
    /// LoRA adapters only; needs the base weights identified by `base_id`.
    Adapters,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Batch order and augmentation draws are functions of the seed and the
/// step, so these two numbers are the whole RNG state of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    /// Digest of the base (non-adapter) weights this checkpoint belongs to.
    pub base_id: String,
    pub model: ModelConfig,
    pub lora: Option<LoraConfig>,
    pub tuned: Vec<ModuleKind>,
    pub rng: RngState,
    pub vocab: Vocab,
    pub train: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<S> {
    pub header: CheckpointHeader,
    pub model: IdcModel<S>,
}

/// Digest of a model's base weights (names, shapes and f64 values).
pub fn base_id<S: Scalar>(model: &IdcModel<S>) -> String {
    let mut h = Sha256::new();
    for p in model.params().iter().filter(|p| p.role == ParamRole::Base) {
        h.update(p.name.as_bytes());
        for &d in p.tensor.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in p.tensor.data() {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..16])
}

fn tuned_modules<S: Scalar>(model: &IdcModel<S>) -> Vec<ModuleKind> {
    let mut out: Vec<ModuleKind> = model
        .params()
        .iter()
        .filter(|p| p.tensor.requires_grad())
        .map(|p| p.module)
        .collect();
    out.sort();
    out.dedup();
    out
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &IdcModel<S>,
    kind: CheckpointKind,
    vocab: &Vocab,
    rng: RngState,
    train: Option<&TrainConfig>,
) -> Result<CheckpointHeader> {
    if kind == CheckpointKind::Adapters && model.lora().is_none() {
        return Err(IdcError::Checkpoint(
            "adapter checkpoint requested for a model without LoRA".into(),
        ));
    }
    let params: Vec<_> = model
        .params()
        .iter()
        .filter(|p| kind == CheckpointKind::Full || p.role.is_adapter())
        .collect();
    let header = CheckpointHeader {
        kind,
        base_id: base_id(model),
        model: model.config().clone(),
        lora: model.lora().cloned(),
        tuned: tuned_modules(model),
        rng,
        vocab: vocab.clone(),
        train: train.cloned(),
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = params.iter().map(|p| p.tensor.numel()).sum();
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &params {
        for &v in p.tensor.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| IdcError::io(path, e))?;
    f.write_all(&buf).map_err(|e| IdcError::io(path, e))?;
    Ok(header)
}

fn parse(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let bad = |m: &str| IdcError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not an IDCK file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(IdcError::Checkpoint(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
    let payload = &body[hlen..];
    let want: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != 8 * want {
        return Err(IdcError::Checkpoint(format!(
            "payload is {} bytes, header describes {}",
            payload.len(),
            8 * want
        )));
    }
    Ok((header, payload))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| IdcError::io(path, e))
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(parse(&read(path)?)?.0)
}

/// Copies the payload tensors into `model` by name, checking shapes.
fn fill<S: Scalar>(model: &mut IdcModel<S>, header: &CheckpointHeader, mut payload: &[u8]) -> Result<()> {
    for t in &header.tensors {
        let i = model
            .params()
            .find(&t.name)
            .ok_or_else(|| IdcError::Checkpoint(format!("tensor {} does not exist in the configured model", t.name)))?;
        let p = model.params_mut().get_mut(i);
        if p.tensor.shape() != t.shape.as_slice() {
            return Err(IdcError::Checkpoint(format!(
                "tensor {}: stored shape {:?}, config implies {:?}",
                t.name,
                t.shape,
                p.tensor.shape()
            )));
        }
        let n = p.tensor.numel();
        let (head, rest) = payload.split_at(8 * n);
        for (dst, chunk) in p.tensor.data_mut().iter_mut().zip(head.chunks_exact(8)) {
            *dst = S::of(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        payload = rest;
    }
    Ok(())
}

fn attach_lora<S: Scalar>(model: &mut IdcModel<S>, lora: &Option<LoraConfig>) -> Result<()> {
    if let Some(l) = lora {
        let keys: Vec<&str> = l.targets.iter().map(|m| m.key()).collect();
        model.apply_lora(l.rank, l.alpha, &keys, 0)?;
    }
    Ok(())
}

/// Loads a full checkpoint.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let bytes = read(path)?;
    let (header, payload) = parse(&bytes)?;
    if header.kind != CheckpointKind::Full {
        return Err(IdcError::Checkpoint(format!(
            "{} holds adapters only; load it on top of base {}",
            path.display(),
            header.base_id
        )));
    }
    let mut model = IdcModel::new(header.model.clone(), 0)?;
    attach_lora(&mut model, &header.lora)?;
    if header.tensors.len() != model.params().len() {
        return Err(IdcError::Checkpoint(format!(
            "{} tensors stored, config implies {}",
            header.tensors.len(),
            model.params().len()
        )));
    }
    fill(&mut model, &header, payload)?;
    if base_id(&model) != header.base_id {
        return Err(IdcError::Checkpoint(
            "base weights do not match the stored digest".into(),
        ));
    }
    model.set_tuned(&header.tuned);
    Ok(Checkpoint { header, model })
}

/// Loads an adapter checkpoint on top of `base`, whose base weights must be
/// the ones the adapters were trained against.
pub fn load_adapters<S: Scalar>(path: &Path, mut base: IdcModel<S>) -> Result<Checkpoint<S>> {
    let bytes = read(path)?;
    let (header, payload) = parse(&bytes)?;
    if header.kind != CheckpointKind::Adapters {
        return Err(IdcError::Checkpoint(format!(
            "{} is not an adapter checkpoint",
            path.display()
        )));
    }
    let id = base_id(&base);
    if id != header.base_id {
        return Err(IdcError::Checkpoint(format!(
            "adapters belong to base {}, given base is {id}",
            header.base_id
        )));
    }
    if base.config() != &header.model {
        return Err(IdcError::Checkpoint(
            "base model config differs from the adapters' config".into(),
        ));
    }
    match (base.lora(), &header.lora) {
        (None, l) => attach_lora(&mut base, l)?,
        (Some(have), Some(want)) if have == want => {}
        _ => return Err(IdcError::Checkpoint("base carries different LoRA settings".into())),
    }
    let adapters = base.params().iter().filter(|p| p.role.is_adapter()).count();
    if header.tensors.len() != adapters {
        return Err(IdcError::Checkpoint(format!(
            "{} adapter tensors stored, the LoRA settings imply {adapters}",
            header.tensors.len()
        )));
    }
    fill(&mut base, &header, payload)?;
    base.set_tuned(&header.tuned);
    Ok(Checkpoint { header, model: base })
}
