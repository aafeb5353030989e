use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn idc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = idc(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_json(path: &Path, v: Value) -> String {
    fs::write(path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn version_carries_build_id() {
    let v = ok(&["--version"]);
    assert!(v.starts_with(&format!("idc {}+", env!("CARGO_PKG_VERSION"))), "{v}");
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("data");
    let dcfg = write_json(&t.join("data.json"), json!({ "render_side": 24 }));
    let out = ok(&[
        "gen-data",
        "--out",
        p(&data),
        "--originals",
        "3",
        "--test-fraction",
        "0.25",
        "--seed",
        "5",
        "--config",
        &dcfg,
    ]);
    assert!(out.starts_with("24 train pairs"), "{out}");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(data.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["resolved"]["render_side"], 24);
    assert_eq!(manifest["resolved"]["seed"], 5);

    let tcfg = write_json(
        &t.join("train.json"),
        json!({
            "batch_size": 2,
            "precision": "f32",
            "lora": { "enabled": true, "rank": 2 },
            "model": {
                "image_side": 16, "patch_side": 8, "d_model": 16, "n_heads": 2,
                "vit_layers": 1, "qformer_layers": 1, "decoder_layers": 1, "n_queries": 2
            }
        }),
    );
    let run = t.join("run");
    let out = ok(&[
        "train",
        "--config",
        &tcfg,
        "--data",
        p(&data),
        "--steps",
        "3",
        "--out",
        p(&run),
    ]);
    assert!(out.contains("adapter / full size ratio"), "{out}");
    for f in [
        "model.idck",
        "base.idck",
        "adapters.idck",
        "loss.csv",
        "val.csv",
        "run-manifest.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("loss.csv")).unwrap().lines().count(), 4);

    let full = t.join("eval-full");
    ok(&[
        "eval",
        "--checkpoint",
        p(&run.join("model.idck")),
        "--data",
        p(&data),
        "--out",
        p(&full),
    ]);
    let split = t.join("eval-split");
    ok(&[
        "eval",
        "--checkpoint",
        p(&run.join("base.idck")),
        "--adapters",
        p(&run.join("adapters.idck")),
        "--data",
        p(&data),
        "--out",
        p(&split),
    ]);
    let preds = fs::read_to_string(full.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 6);
    assert_eq!(preds, fs::read_to_string(split.join("predictions.jsonl")).unwrap());

    let scored = t.join("scored");
    let table = ok(&[
        "metrics",
        "--predictions",
        p(&full.join("predictions.jsonl")),
        "--references",
        p(&full.join("references.jsonl")),
        "--out",
        p(&scored),
    ]);
    assert!(table.contains("| Overall |"), "{table}");
    assert_eq!(
        fs::read_to_string(scored.join("report.csv")).unwrap(),
        fs::read_to_string(full.join("report.csv")).unwrap()
    );
}

#[test]
fn errors_exit_nonzero_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = idc(&["train", "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no dataset given"));

    let bad = write_json(&tmp.path().join("bad.json"), json!({ "stepz": 3 }));
    let out = idc(&[
        "train",
        "--config",
        &bad,
        "--data",
        p(tmp.path()),
        "--out",
        p(tmp.path()),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}
