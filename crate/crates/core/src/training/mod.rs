//! Fine-tuning with per-module freezing and LoRA, checkpoints, and the
//! ablation, encoder and augmentation studies.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod optim;
pub mod studies;
pub mod trainer;

pub use checkpoint::{
    base_id, load_adapters, load_checkpoint, read_header, save_checkpoint, Checkpoint, CheckpointHeader,
    CheckpointKind, RngState,
};
pub use config::{AdamConfig, LoraSettings, Precision, TrainConfig, TuneFlags};
pub use data::{load_split, BatchOrder, LoadedPair, TrainData};
pub use eval::{evaluate, predict, references};
pub use optim::{learning_rate, Adam};
pub use studies::{config_diff, run_ablation, run_augmentation_study, run_encoder_comparison, StudyRow, StudyTable};
pub use trainer::{prepare_model, train, StepRecord, TrainOutcome, ValRecord};
