//! Miniature captioner: patch ViT, QFormer with learned queries, causal
//! decoder, LoRA adapters, and a two-stream baseline encoder.

pub mod config;
pub mod generate;
pub mod idc;
pub mod input;
pub mod params;


pub use config::{EncoderMode, ModelConfig, ModuleKind};
pub use generate::{generate, DecodeMode, Hypothesis, StepLogits};
pub use idc::{Bound, IdcModel, LoraConfig, Session};
pub use input::{patchify, prepare_pair};
pub use params::{Param, ParamCount, ParamRole, ParamStore};
