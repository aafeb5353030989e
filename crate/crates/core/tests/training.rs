use std::path::{Path, PathBuf};

use idc_core::dataset::{build_dataset, DatasetConfig, Split};
use idc_core::model::{DecodeMode, EncoderMode, IdcModel, ModelConfig, ParamRole};
use idc_core::training::{
    base_id, load_adapters, load_checkpoint, load_split, read_header, run_ablation, run_augmentation_study,
    run_encoder_comparison, save_checkpoint, train, CheckpointKind, RngState, TrainConfig, TrainData, TuneFlags,
};
use idc_core::{IdcError, Model64};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        image_side: 16,
        patch_side: 8,
        d_model: 16,
        n_heads: 2,
        vit_layers: 1,
        qformer_layers: 1,
        decoder_layers: 1,
        n_queries: 2,
        mlp_ratio: 2,
        max_caption_len: 16,
        ..ModelConfig::default()
    }
}

fn dataset(dir: &Path, originals: usize, seed: u64, test_fraction: f64) -> PathBuf {
    let cfg = DatasetConfig {
        n_originals: originals,
        seed,
        test_fraction,
        val_fraction: 0.0,
        render_side: 24,
        ..DatasetConfig::default()
    };
    build_dataset(&cfg, dir).unwrap();
    dir.to_path_buf()
}

fn config(path: &Path, steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        lr: 3e-3,
        model: tiny_model(),
        datasets: vec![path.to_path_buf()],
        ..TrainConfig::default()
    }
}

fn forward_fingerprint(model: &Model64, data: &TrainData) -> Vec<u64> {
    let p = &data.train[0];
    let x = p.input::<f64>(model.config(), None).unwrap();
    let mem = model.encode_prepared(&[&x]).unwrap();
    let mut bits: Vec<u64> = mem.data().iter().map(|v| v.to_bits()).collect();
    bits.extend(model.decode_step(&mem, &[4, 5]).unwrap().iter().map(|v| v.to_bits()));
    bits
}

#[test]
fn same_seed_gives_identical_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let path = dataset(tmp.path(), 3, 0, 0.25);
    let data = TrainData::load(&[path.clone()]).unwrap();
    for augment in [false, true] {
        let cfg = TrainConfig {
            augment,
            ..config(&path, 101)
        };
        let a = train::<f64>(&cfg, &data, None).unwrap();
        let b = train::<f64>(&cfg, &data, None).unwrap();
        assert_eq!(a.losses[100].loss.to_bits(), b.losses[100].loss.to_bits());
        assert_eq!(a.loss_csv(), b.loss_csv());
        assert_eq!(
            forward_fingerprint(&a.model, &data),
            forward_fingerprint(&b.model, &data)
        );
        let c = train::<f64>(&TrainConfig { seed: 1, ..cfg }, &data, None).unwrap();
        assert_ne!(a.losses[100].loss, c.losses[100].loss);
    }
}

#[test]
fn frozen_tensors_never_move() {
    let tmp = tempfile::tempdir().unwrap();
    let path = dataset(tmp.path(), 2, 1, 0.25);
    let data = TrainData::load(&[path.clone()]).unwrap();
    let only_qformer = TuneFlags {
        vit: false,
        qformer: true,
        lm: false,
    };
    for lora in [false, true] {
        let mut cfg = TrainConfig {
            tune: only_qformer,
            ..config(&path, 20)
        };
        cfg.lora.enabled = lora;
        cfg.lora.rank = 2;
        let init = idc_core::training::prepare_model::<f64>(&cfg, &data, None).unwrap();
        let out = train::<f64>(&cfg, &data, None).unwrap();
        let mut moved = 0;
        for (a, b) in init.params().iter().zip(out.model.params().iter()) {
            let trainable = a.module == idc_core::model::ModuleKind::Qformer && a.role.is_adapter() == lora;
            let same = a.tensor.bit_eq(&b.tensor);
            if trainable {
                moved += !same as usize;
            } else {
                assert!(same, "{} changed (lora {lora})", a.name);
            }
        }
        assert!(moved > 0);
    }
}

#[test]
fn one_sample_loss_falls() {
    let tmp = tempfile::tempdir().unwrap();
    let path = dataset(tmp.path(), 1, 2, 0.0);
    let mut data = TrainData::load(&[path.clone()]).unwrap();
    data.train.truncate(1);
    data.targets.truncate(1);
    let out = train::<f64>(
        &TrainConfig {
            batch_size: 1,
            ..config(&path, 400)
        },
        &data,
        None,
    )
    .unwrap();
    assert!(out.losses[0].loss > 1.0);
    assert!(out.final_loss() < 0.1, "{}", out.final_loss());
}

#[test]
fn exploding_run_aborts_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let path = dataset(tmp.path(), 1, 3, 0.0);
    let data = TrainData::load(&[path.clone()]).unwrap();
    let cfg = TrainConfig {
        lr: 1e300,
        grad_clip: None,
        ..config(&path, 50)
    };
    match train::<f64>(&cfg, &data, None) {
        Err(IdcError::NonFinite { step, lr, .. }) => {
            assert!(step > 0 && step < 50);
            assert!(lr > 0.0);
        }
        other => panic!("expected NonFinite, got {:?}", other.map(|o| o.final_loss())),
    }
}

#[test]
fn validation_runs_on_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        n_originals: 3,
        val_fraction: 0.25,
        test_fraction: 0.0,
        render_side: 24,
        ..DatasetConfig::default()
    };
    build_dataset(&cfg, tmp.path()).unwrap();
    let data = TrainData::load(&[tmp.path().to_path_buf()]).unwrap();
    assert_eq!(data.val.len(), 6);
    let out = train::<f64>(
        &TrainConfig {
            val_every: 5,
            ..config(tmp.path(), 12)
        },
        &data,
        None,
    )
    .unwrap();
    assert_eq!(out.val.iter().map(|v| v.step).collect::<Vec<_>>(), vec![5, 10]);
    assert!(out.val.iter().all(|v| v.cider.is_finite() && v.cider >= 0.0));
    assert_eq!(out.val_csv().lines().count(), 3);
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let path = dataset(&tmp.path().join("d"), 2, 4, 0.25);
    let data = TrainData::load(&[path.clone()]).unwrap();
    let mut cfg = config(&path, 10);
    cfg.lora.enabled = true;
    cfg.lora.rank = 2;
    let out = train::<f64>(&cfg, &data, None).unwrap();
    let rng = RngState { seed: 0, step: 10 };

    let full = tmp.path().join("full.idck");
    save_checkpoint(&full, &out.model, CheckpointKind::Full, &data.vocab, rng, Some(&cfg)).unwrap();
    let back = load_checkpoint::<f64>(&full).unwrap();
    assert_eq!(back.header.vocab, data.vocab);
    assert_eq!(back.header.train.as_ref(), Some(&cfg));
    for (a, b) in out.model.params().iter().zip(back.model.params().iter()) {
        assert_eq!(a.name, b.name);
        assert!(a.tensor.bit_eq(&b.tensor), "{}", a.name);
        assert_eq!(a.tensor.requires_grad(), b.tensor.requires_grad());
    }
    assert_eq!(
        forward_fingerprint(&out.model, &data),
        forward_fingerprint(&back.model, &data)
    );

    // adapters on top of the untouched base they were trained against
    let adapters = tmp.path().join("lora.idck");
    save_checkpoint(
        &adapters,
        &out.model,
        CheckpointKind::Adapters,
        &data.vocab,
        rng,
        Some(&cfg),
    )
    .unwrap();
    let base = IdcModel::<f64>::new(out.model.config().clone(), cfg.seed).unwrap();
    assert_eq!(base_id(&base), read_header(&adapters).unwrap().base_id);
    let restored = load_adapters(&adapters, base).unwrap();
    assert_eq!(
        forward_fingerprint(&out.model, &data),
        forward_fingerprint(&restored.model, &data)
    );

    let wrong = IdcModel::<f64>::new(out.model.config().clone(), cfg.seed + 1).unwrap();
    assert!(matches!(load_adapters(&adapters, wrong), Err(IdcError::Checkpoint(_))));
    assert!(load_checkpoint::<f64>(&adapters).is_err());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let model = IdcModel::<f64>::new(
        ModelConfig {
            vocab_size: 8,
            ..tiny_model()
        },
        0,
    )
    .unwrap();
    let vocab = idc_core::dataset::Vocab::build(["a b c d"]);
    let path = tmp.path().join("m.idck");
    save_checkpoint(
        &path,
        &model,
        CheckpointKind::Full,
        &vocab,
        RngState { seed: 0, step: 0 },
        None,
    )
    .unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let check = |b: &[u8], what: &str| {
        let p = tmp.path().join("bad.idck");
        std::fs::write(&p, b).unwrap();
        match load_checkpoint::<f64>(&p) {
            Err(IdcError::Checkpoint(m)) => assert!(m.contains(what), "{m}"),
            other => panic!("{what}: {:?}", other.map(|c| c.header.kind)),
        }
    };
    let mut b = bytes.clone();
    b[0] = b'X';
    check(&b, "magic");
    let mut b = bytes.clone();
    b[4] = 9;
    check(&b, "version");
    check(&bytes[..bytes.len() - 8], "payload");
    // header claims a different vocabulary size: tensor shapes no longer fit
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
    header["model"]["vocab_size"] = 9.into();
    let h = serde_json::to_vec(&header).unwrap();
    let mut b = bytes[..8].to_vec();
    b.extend_from_slice(&(h.len() as u64).to_le_bytes());
    b.extend_from_slice(&h);
    b.extend_from_slice(&bytes[16 + hlen..]);
    check(&b, "shape");
}

#[test]
fn adapter_file_is_a_small_fraction_of_full() {
    let tmp = tempfile::tempdir().unwrap();
    let mut model = IdcModel::<f64>::new(ModelConfig::default(), 0).unwrap();
    model.apply_lora(8, 16.0, &["vit", "qformer", "lm"], 0).unwrap();
    let vocab = idc_core::dataset::Vocab::build(["a"]);
    let rng = RngState { seed: 0, step: 0 };
    let (full, lora) = (tmp.path().join("f"), tmp.path().join("l"));
    save_checkpoint(&full, &model, CheckpointKind::Full, &vocab, rng, None).unwrap();
    save_checkpoint(&lora, &model, CheckpointKind::Adapters, &vocab, rng, None).unwrap();
    let (f, l) = (
        std::fs::metadata(&full).unwrap().len(),
        std::fs::metadata(&lora).unwrap().len(),
    );
    let ratio = l as f64 / f as f64;
    println!("adapter checkpoint {l} bytes, full {f} bytes, ratio {ratio:.4}");
    let adapters: usize = model
        .params()
        .iter()
        .filter(|p| p.role != ParamRole::Base)
        .map(|p| p.tensor.numel())
        .sum();
    assert!(l as usize >= 8 * adapters);
    assert!(ratio < 0.1);
}

#[test]
fn studies_vary_one_factor() {
    let tmp = tempfile::tempdir().unwrap();
    let base_path = dataset(&tmp.path().join("base"), 2, 5, 0.25);
    let syn_path = dataset(&tmp.path().join("syn"), 2, 6, 0.0);
    let base = TrainData::load(&[base_path.clone()]).unwrap();
    let cfg = config(&base_path, 3);

    let ab = run_ablation(&cfg, &base, &TuneFlags::non_empty_subsets(), &[0], DecodeMode::Greedy).unwrap();
    assert_eq!(ab.summary().len(), 7);
    assert_eq!(ab.summary_csv().lines().count(), 8);
    assert_eq!(ab.runs_csv().lines().count(), 8);

    let enc = run_encoder_comparison(&cfg, &base, &[0, 1], DecodeMode::Greedy).unwrap();
    let s = enc.summary();
    assert_eq!(s.len(), 2);
    assert_eq!(s[1].total_params, s[0].total_params + 2 * cfg.model.d_model);
    assert!(enc
        .rows
        .iter()
        .all(|r| r.config.model.encoder_mode == EncoderMode::TwoStream || r.variant == "joint"));

    let aug = TrainData::load(&[base_path.clone(), syn_path.clone()]).unwrap();
    assert!(aug.train.len() > base.train.len());
    let table = run_augmentation_study(&cfg, &base, &aug, &[0], DecodeMode::Greedy).unwrap();
    assert_eq!(table.rows[0].test_ids, table.rows[1].test_ids);
    assert!(table.summary_csv().contains("base+synthetic"));

    // a different first dataset means a different test set
    let other = TrainData::load(&[syn_path, base_path]).unwrap();
    assert!(run_augmentation_study(&cfg, &base, &other, &[0], DecodeMode::Greedy).is_err());
}

#[test]
fn load_split_reads_images() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 1, 7, 0.0);
    let ds = idc_core::dataset::Dataset::load(tmp.path()).unwrap();
    let pairs = load_split(&ds, Split::Train).unwrap();
    assert_eq!(pairs.len(), 8);
    assert_eq!(pairs[0].ref_image.width(), 24);
}

#[test]
fn datasets_combine_but_not_twice() {
    let tmp = tempfile::tempdir().unwrap();
    let a = dataset(&tmp.path().join("a"), 1, 2, 0.0);
    let b = dataset(&tmp.path().join("b"), 1, 3, 0.0);
    let both = TrainData::load(&[a.clone(), b]).unwrap();
    assert_eq!(both.train.len(), 16);
    assert!(TrainData::load(&[a.clone(), a]).is_err());
}
