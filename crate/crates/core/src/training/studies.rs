use std::collections::BTreeMap;
use std::fmt::Write;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::config::{Precision, TrainConfig, TuneFlags};
use super::data::TrainData;
use super::eval::evaluate;
use super::trainer::train;
use crate::error::{IdcError, Result};
use crate::metrics::Means;
use crate::model::{DecodeMode, EncoderMode};
use crate::scalar::Scalar;

/// Outcome of one training run inside a study.
#[derive(Clone, Debug, Serialize)]
pub struct StudyRow {
    pub variant: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub scores: Means,
    pub final_loss: f64,
    pub trainable_params: usize,
    pub total_params: usize,
    pub test_ids: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub mean_cider: f64,
    pub per_seed: Vec<f64>,
    pub trainable_params: usize,
    pub total_params: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyTable {
    pub name: String,
    pub rows: Vec<StudyRow>,
}

/// Dotted paths of the leaves where two configs differ.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let p = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(
                        &p,
                        x.get(k).unwrap_or(&Value::Null),
                        y.get(k).unwrap_or(&Value::Null),
                        out,
                    );
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(
        "",
        &serde_json::to_value(a).unwrap(),
        &serde_json::to_value(b).unwrap(),
        &mut out,
    );
    out
}

/// Checks that rows sharing a seed differ only under the `allowed` paths.
fn check_one_factor(rows: &[StudyRow], allowed: &[&str]) -> Result<()> {
    for a in rows {
        for b in rows.iter().filter(|b| b.seed == a.seed) {
            for path in config_diff(&a.config, &b.config) {
                if !allowed.iter().any(|p| path == *p || path.starts_with(&format!("{p}."))) {
                    return Err(IdcError::Config(format!(
                        "variants {} and {} also differ in {path}",
                        a.variant, b.variant
                    )));
                }
            }
        }
    }
    Ok(())
}

fn run(variant: &str, cfg: TrainConfig, data: &TrainData, mode: DecodeMode) -> Result<StudyRow> {
    match cfg.precision {
        Precision::F32 => run_at::<f32>(variant, cfg, data, mode),
        Precision::F64 => run_at::<f64>(variant, cfg, data, mode),
    }
}

fn run_at<S: Scalar>(variant: &str, cfg: TrainConfig, data: &TrainData, mode: DecodeMode) -> Result<StudyRow> {
    let out = train::<S>(&cfg, data, None)?;
    let (_, report) = evaluate(&out.model, &data.vocab, &data.test, mode)?;
    log::info!("{variant} seed {}: CIDEr-D {:.4}", cfg.seed, report.overall.cider);
    Ok(StudyRow {
        variant: variant.to_string(),
        seed: cfg.seed,
        scores: report.overall,
        final_loss: out.final_loss(),
        trainable_params: out.model.count_params(true).total,
        total_params: out.model.count_params(false).total,
        test_ids: data.test.iter().map(|p| p.triplet.id.clone()).collect(),
        config: cfg,
    })
}

/// Trains every (variant, seed) pair. Runs are independent and may execute
/// in parallel; row order is variant-major regardless.
fn run_grid(
    variants: Vec<(String, TrainConfig, &TrainData)>,
    seeds: &[u64],
    mode: DecodeMode,
) -> Result<Vec<StudyRow>> {
    if seeds.is_empty() {
        return Err(IdcError::Config("a study needs at least one seed".into()));
    }
    let jobs: Vec<(String, TrainConfig, &TrainData)> = variants
        .iter()
        .flat_map(|(name, cfg, data)| {
            seeds
                .iter()
                .map(move |&seed| (name.clone(), TrainConfig { seed, ..cfg.clone() }, *data))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(name, cfg, data)| run(&name, cfg, data, mode))
        .collect()
}

/// One run per tune-flag subset and seed, everything else fixed.
pub fn run_ablation(
    base: &TrainConfig,
    data: &TrainData,
    subsets: &[TuneFlags],
    seeds: &[u64],
    mode: DecodeMode,
) -> Result<StudyTable> {
    let variants = subsets
        .iter()
        .map(|&tune| (tune.label(), TrainConfig { tune, ..base.clone() }, data))
        .collect();
    let rows = run_grid(variants, seeds, mode)?;
    check_one_factor(&rows, &["tune"])?;
    Ok(StudyTable {
        name: "ablation".into(),
        rows,
    })
}

pub fn run_encoder_comparison(
    base: &TrainConfig,
    data: &TrainData,
    seeds: &[u64],
    mode: DecodeMode,
) -> Result<StudyTable> {
    let variants = [EncoderMode::Joint, EncoderMode::TwoStream]
        .into_iter()
        .map(|m| {
            let mut cfg = base.clone();
            cfg.model.encoder_mode = m;
            (m.key().to_string(), cfg, data)
        })
        .collect();
    let rows = run_grid(variants, seeds, mode)?;
    check_one_factor(&rows, &["model.encoder_mode"])?;
    Ok(StudyTable {
        name: "encoder".into(),
        rows,
    })
}

/// Base train data against base plus synthetic pairs, scored on the same
/// test set.
pub fn run_augmentation_study(
    base_cfg: &TrainConfig,
    base: &TrainData,
    augmented: &TrainData,
    seeds: &[u64],
    mode: DecodeMode,
) -> Result<StudyTable> {
    let ids = |d: &TrainData| d.test.iter().map(|p| p.triplet.id.clone()).collect::<Vec<_>>();
    if ids(base) != ids(augmented) {
        return Err(IdcError::Config(
            "base and augmented runs would be scored on different test sets".into(),
        ));
    }
    if augmented.train.len() <= base.train.len() {
        return Err(IdcError::Config(format!(
            "augmented data has {} train pairs, base has {}",
            augmented.train.len(),
            base.train.len()
        )));
    }
    let cfg_for = |d: &TrainData| TrainConfig {
        datasets: d.sources.clone(),
        ..base_cfg.clone()
    };
    let variants = vec![
        ("base".to_string(), cfg_for(base), base),
        ("base+synthetic".to_string(), cfg_for(augmented), augmented),
    ];
    let rows = run_grid(variants, seeds, mode)?;
    check_one_factor(&rows, &["datasets"])?;
    Ok(StudyTable {
        name: "augmentation".into(),
        rows,
    })
}

impl StudyTable {
    /// Variants in first-appearance order with per-seed CIDEr-D.
    pub fn summary(&self) -> Vec<VariantSummary> {
        let mut order: Vec<&str> = Vec::new();
        let mut by: BTreeMap<&str, Vec<&StudyRow>> = BTreeMap::new();
        for r in &self.rows {
            if !by.contains_key(r.variant.as_str()) {
                order.push(&r.variant);
            }
            by.entry(&r.variant).or_default().push(r);
        }
        order
            .into_iter()
            .map(|v| {
                let rows = &by[v];
                let per_seed: Vec<f64> = rows.iter().map(|r| r.scores.cider).collect();
                VariantSummary {
                    variant: v.to_string(),
                    mean_cider: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                    per_seed,
                    trainable_params: rows[0].trainable_params,
                    total_params: rows[0].total_params,
                }
            })
            .collect()
    }

    pub fn mean_cider(&self, variant: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.variant == variant)
            .map(|s| s.mean_cider)
    }

    /// One row per run.
    pub fn runs_csv(&self) -> String {
        let mut out =
            String::from("variant,seed,cider_d,bleu4,rouge_l,meteor_star,final_loss,trainable_params,total_params\n");
        for r in &self.rows {
            let s = &r.scores;
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.variant,
                r.seed,
                s.cider,
                s.bleu4,
                s.rouge_l,
                s.meteor,
                r.final_loss,
                r.trainable_params,
                r.total_params
            )
            .unwrap();
        }
        out
    }

    /// One row per variant: mean CIDEr-D, per-seed values, and the change
    /// relative to the first variant in percent.
    pub fn summary_csv(&self) -> String {
        let summary = self.summary();
        let seeds: Vec<u64> = {
            let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
            s.dedup();
            s.sort();
            s.dedup();
            s
        };
        let mut out = String::from("variant,mean_cider_d");
        for s in &seeds {
            write!(out, ",cider_d_seed{s}").unwrap();
        }
        out.push_str(",relative_pct,trainable_params,total_params\n");
        let first = summary.first().map_or(0.0, |s| s.mean_cider);
        for v in &summary {
            write!(out, "{},{:.6}", v.variant, v.mean_cider).unwrap();
            for c in &v.per_seed {
                write!(out, ",{c:.6}").unwrap();
            }
            let rel = if first != 0.0 {
                100.0 * (v.mean_cider - first) / first
            } else {
                f64::NAN
            };
            writeln!(out, ",{rel:.2},{},{}", v.trainable_params, v.total_params).unwrap();
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "### {}\n\n| Variant | Mean CIDEr-D | Per seed | Trainable params |\n|---|---|---|---|\n",
            self.name
        );
        for v in self.summary() {
            let per: Vec<String> = v.per_seed.iter().map(|c| format!("{c:.3}")).collect();
            writeln!(
                out,
                "| {} | {:.4} | {} | {} |",
                v.variant,
                v.mean_cider,
                per.join(", "),
                v.trainable_params
            )
            .unwrap();
        }
        out
    }
}
