use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{IdcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Reference stacked over modified, encoded as one image.
    Joint,
    /// Shared ViT per image, features fused before the QFormer.
    TwoStream,
}

impl EncoderMode {
    pub fn key(self) -> &'static str {
        match self {
            EncoderMode::Joint => "joint",
            EncoderMode::TwoStream => "two_stream",
        }
    }

    pub fn from_key(s: &str) -> Option<Self> {
        match s {
            "joint" => Some(EncoderMode::Joint),
            "two_stream" | "two-stream" => Some(EncoderMode::TwoStream),
            _ => None,
        }
    }
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Parameter groups that can be tuned or frozen independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Vit,
    Qformer,
    Lm,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 3] = [ModuleKind::Vit, ModuleKind::Qformer, ModuleKind::Lm];

    pub fn key(self) -> &'static str {
        match self {
            ModuleKind::Vit => "vit",
            ModuleKind::Qformer => "qformer",
            ModuleKind::Lm => "lm",
        }
    }

    pub fn from_key(s: &str) -> Result<Self> {
        ModuleKind::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| IdcError::InvalidArgument(format!("unknown module {s:?} (expected vit, qformer or lm)")))
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_side: usize,
    pub patch_side: usize,
    pub channels: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vit_layers: usize,
    pub qformer_layers: usize,
    pub decoder_layers: usize,
    pub n_queries: usize,
    /// Hidden width of the feed-forward blocks as a multiple of `d_model`.
    pub mlp_ratio: usize,
    pub vocab_size: usize,
    pub max_caption_len: usize,
    pub encoder_mode: EncoderMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_side: 64,
            patch_side: 8,
            channels: 3,
            d_model: 128,
            n_heads: 4,
            vit_layers: 4,
            qformer_layers: 2,
            decoder_layers: 2,
            n_queries: 8,
            mlp_ratio: 4,
            vocab_size: 64,
            max_caption_len: 24,
            encoder_mode: EncoderMode::Joint,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IdcError::Config(m));
        if self.patch_side == 0 || !self.image_side.is_multiple_of(self.patch_side) {
            return bad(format!(
                "image_side {} is not a multiple of patch_side {}",
                self.image_side, self.patch_side
            ));
        }
        if self.channels != 3 {
            return bad(format!("only 3-channel input is supported, got {}", self.channels));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_queries == 0 {
            return bad("n_queries must be at least 1".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be at least 1".into());
        }
        if self.vocab_size <= crate::dataset::vocab::UNK {
            return bad(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if self.max_caption_len < 2 {
            return bad("max_caption_len must be at least 2".into());
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        let per_side = self.image_side / self.patch_side;
        per_side * per_side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side * self.channels
    }

    /// Vision tokens the QFormer sees per sample.
    pub fn vision_tokens(&self) -> usize {
        match self.encoder_mode {
            EncoderMode::Joint => self.n_patches(),
            EncoderMode::TwoStream => 2 * self.n_patches(),
        }
    }
}
