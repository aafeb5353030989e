use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{IdcError, Result};
use crate::imaging::AugmentConfig;
use crate::model::{ModelConfig, ModuleKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraSettings {
    pub enabled: bool,
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraSettings {
    fn default() -> Self {
        LoraSettings {
            enabled: false,
            rank: 8,
            alpha: 16.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneFlags {
    pub vit: bool,
    pub qformer: bool,
    pub lm: bool,
}

impl Default for TuneFlags {
    fn default() -> Self {
        TuneFlags::ALL
    }
}

impl TuneFlags {
    pub const ALL: TuneFlags = TuneFlags {
        vit: true,
        qformer: true,
        lm: true,
    };

    pub fn modules(self) -> Vec<ModuleKind> {
        let mut out = Vec::new();
        if self.vit {
            out.push(ModuleKind::Vit);
        }
        if self.qformer {
            out.push(ModuleKind::Qformer);
        }
        if self.lm {
            out.push(ModuleKind::Lm);
        }
        out
    }

    pub fn any(self) -> bool {
        self.vit || self.qformer || self.lm
    }

    /// The seven non-empty subsets, single modules first.
    pub fn non_empty_subsets() -> Vec<TuneFlags> {
        let mut all: Vec<TuneFlags> = (1u8..8)
            .map(|m| TuneFlags {
                vit: m & 1 != 0,
                qformer: m & 2 != 0,
                lm: m & 4 != 0,
            })
            .collect();
        all.sort_by_key(|f| (f.modules().len(), !f.vit, !f.qformer, !f.lm));
        all
    }

    /// Short label such as `vit+lm`.
    pub fn label(self) -> String {
        self.modules().iter().map(|m| m.key()).collect::<Vec<_>>().join("+")
    }
}

/// Float width a run trains at. Checkpoints are written at f64 either way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Missing fields in JSON take their default values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub precision: Precision,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of `steps` spent in linear warmup.
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub lora: LoraSettings,
    pub tune: TuneFlags,
    /// `vocab_size` is replaced by the training vocabulary's size.
    pub model: ModelConfig,
    /// Photometric augmentation of training inputs.
    pub augment: bool,
    pub augment_config: AugmentConfig,
    /// Train splits are concatenated; val and test come from the first.
    pub datasets: Vec<PathBuf>,
    /// Validation CIDEr every this many steps (0 = never).
    pub val_every: usize,
    /// Cap on val triplets decoded per validation.
    pub val_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            precision: Precision::F64,
            steps: 1000,
            batch_size: 16,
            lr: 3e-4,
            warmup_fraction: 0.05,
            adam: AdamConfig::default(),
            grad_clip: Some(1.0),
            lora: LoraSettings::default(),
            tune: TuneFlags::ALL,
            model: ModelConfig::default(),
            augment: false,
            augment_config: AugmentConfig::default(),
            datasets: Vec::new(),
            val_every: 0,
            val_limit: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IdcError::Config(m));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad(format!("bad Adam settings {a:?}"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        if !self.tune.any() && !self.lora.enabled {
            return bad("nothing to train: every module frozen and LoRA off".into());
        }
        if self.lora.enabled && (self.lora.rank == 0 || !(self.lora.alpha > 0.0)) {
            return bad(format!("bad LoRA settings {:?}", self.lora));
        }
        self.model.validate()
    }

    /// Modules whose weights (or adapters, under LoRA) train. LoRA with no
    /// tune flag set adapts every module.
    pub fn tuned_modules(&self) -> Vec<ModuleKind> {
        if self.lora.enabled && !self.tune.any() {
            ModuleKind::ALL.to_vec()
        } else {
            self.tune.modules()
        }
    }

    pub fn warmup_steps(&self) -> usize {
        ((self.steps as f64 * self.warmup_fraction).ceil() as usize).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_everything_without_lora_is_rejected() {
        let mut cfg = TrainConfig {
            tune: TuneFlags {
                vit: false,
                qformer: false,
                lm: false,
            },
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(IdcError::Config(_))));
        cfg.lora.enabled = true;
        cfg.validate().unwrap();
        assert_eq!(cfg.tuned_modules(), ModuleKind::ALL.to_vec());
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seven_subsets() {
        let s = TuneFlags::non_empty_subsets();
        assert_eq!(s.len(), 7);
        assert_eq!(s[0].label(), "vit");
        assert_eq!(s[6], TuneFlags::ALL);
        let uniq: std::collections::HashSet<_> = s.iter().collect();
        assert_eq!(uniq.len(), 7);
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let mut v = serde_json::to_value(TrainConfig::default()).unwrap();
        v["stpes"] = 3.into();
        assert!(serde_json::from_value::<TrainConfig>(v).is_err());
    }
}
