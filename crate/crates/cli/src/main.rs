use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use idc_core::dataset::{build_dataset, read_jsonl, write_jsonl, Dataset, DatasetConfig, Split};
use idc_core::metrics::{corpus_evaluate, MetricReport, Prediction, Reference};
use idc_core::model::{DecodeMode, IdcModel};
use idc_core::training::{
    load_adapters, load_checkpoint, load_split, predict, references, run_ablation, run_augmentation_study,
    run_encoder_comparison, save_checkpoint, train, CheckpointKind, Precision, RngState, StudyTable, TrainConfig,
    TrainData, TuneFlags,
};
use idc_core::Scalar;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("IDC_GIT_DESCRIBE"));

#[derive(Parser)]
#[command(name = "idc", version = VERSION, about = "Image difference captioning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic triplet dataset.
    GenData(GenData),
    /// Train one model and write checkpoints plus loss curves.
    Train(TrainArgs),
    /// Caption a split with a checkpoint and score it.
    Eval(EvalArgs),
    /// Score prediction JSONL against reference JSONL.
    Metrics(MetricsArgs),
    /// Train every non-empty {vit, qformer, lm} subset.
    Ablate(StudyArgs),
    /// Train on base data, then on base plus synthetic data.
    StudyAug(StudyAugArgs),
    /// Train the joint and the two-stream encoder.
    StudyEncoder(StudyArgs),
}

#[derive(Args, Serialize)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    /// Number of original scenes [default: 250].
    #[arg(long)]
    originals: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    test_fraction: Option<f64>,
    /// [default: 0.05]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// JSON dataset config; flags given on the command line override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainOverrides {
    /// JSON train config; unspecified fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directories, concatenated in order. Replaces the config's list.
    #[arg(long = "data")]
    data: Vec<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    train: TrainOverrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Full checkpoint, or the base checkpoint when --adapters is given.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    adapters: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    split: String,
    /// Beam width; 0 decodes greedily.
    #[arg(long, default_value_t = 0)]
    beam: usize,
    /// Perturb inputs with the dataset's test augmentation, drawn from this seed.
    #[arg(long)]
    augment_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct MetricsArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    references: PathBuf,
    /// Directory for report.csv, report.md and samples.csv; stdout only if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct StudyArgs {
    #[command(flatten)]
    train: TrainOverrides,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    beam: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct StudyAugArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// The small base dataset; its val and test splits are used for both runs.
    #[arg(long)]
    base: PathBuf,
    /// Synthetic datasets whose train splits are appended to the base.
    #[arg(long, required = true)]
    synthetic: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = threads().and_then(|_| run(cli.command)) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn threads() -> Result<()> {
    let Ok(v) = std::env::var("IDC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().with_context(|| format!("IDC_THREADS={v} is not a count"))?;
    if n == 0 {
        bail!("IDC_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Ablate(a) => study_cmd("ablate", a, |cfg, data, seeds, mode| {
            Ok(run_ablation(cfg, data, &TuneFlags::non_empty_subsets(), seeds, mode)?)
        }),
        Command::StudyEncoder(a) => study_cmd("study-encoder", a, |cfg, data, seeds, mode| {
            Ok(run_encoder_comparison(cfg, data, seeds, mode)?)
        }),
        Command::StudyAug(a) => study_aug(a),
    }
}

fn decode_mode(beam: usize) -> DecodeMode {
    if beam == 0 {
        DecodeMode::Greedy
    } else {
        DecodeMode::Beam(beam)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Records what produced the files next to it. The timestamp lives here and
/// nowhere else, so every other output is byte-identical across reruns.
fn write_manifest(dir: &Path, command: &str, args: &impl Serialize, resolved: Value) -> Result<()> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": command,
        "version": VERSION,
        "args": args,
        "resolved": resolved,
        "unix_time": secs,
    });
    write(
        &dir.join("run-manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg: DatasetConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => DatasetConfig::default(),
    };
    let cfg = DatasetConfig {
        n_originals: a.originals.unwrap_or(cfg.n_originals),
        test_fraction: a.test_fraction.unwrap_or(cfg.test_fraction),
        val_fraction: a.val_fraction.unwrap_or(cfg.val_fraction),
        seed: a.seed.unwrap_or(cfg.seed),
        ..cfg
    };
    let ds = build_dataset(&cfg, &a.out)?;
    write_manifest(&a.out, "gen-data", &a, serde_json::to_value(&cfg)?)?;
    println!(
        "{} train pairs, {} val, {} test triplets in {}\n",
        ds.manifest.count(Split::Train),
        ds.manifest.count(Split::Val),
        ds.manifest.count(Split::Test),
        a.out.display()
    );
    print!("{}", ds.manifest.summary_table());
    Ok(())
}

fn resolve(o: &TrainOverrides) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &o.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if !o.data.is_empty() {
        cfg.datasets = o.data.clone();
    }
    if let Some(s) = o.steps {
        cfg.steps = s;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(lr) = o.lr {
        cfg.lr = lr;
    }
    if cfg.datasets.is_empty() {
        bail!("no dataset given: pass --data or list datasets in the config");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve(&a.train)?;
    let data = TrainData::load(&cfg.datasets)?;
    create_dir(&a.out)?;
    match cfg.precision {
        Precision::F32 => train_at::<f32>(&a, &cfg, &data),
        Precision::F64 => train_at::<f64>(&a, &cfg, &data),
    }
}

fn train_at<S: Scalar>(a: &TrainArgs, cfg: &TrainConfig, data: &TrainData) -> Result<()> {
    let out = train::<S>(cfg, data, None)?;
    let rng = RngState {
        seed: cfg.seed,
        step: cfg.steps,
    };
    let full = a.out.join("model.idck");
    save_checkpoint(
        &full,
        &out.model,
        CheckpointKind::Full,
        &data.vocab,
        rng,
        Some(&out.config),
    )?;
    let mut sizes = vec![("model.idck", fs::metadata(&full)?.len())];
    if out.model.lora().is_some() {
        let base = IdcModel::<S>::new(out.model.config().clone(), cfg.seed)?;
        let base_path = a.out.join("base.idck");
        save_checkpoint(
            &base_path,
            &base,
            CheckpointKind::Full,
            &data.vocab,
            rng,
            Some(&out.config),
        )?;
        let ad = a.out.join("adapters.idck");
        save_checkpoint(
            &ad,
            &out.model,
            CheckpointKind::Adapters,
            &data.vocab,
            rng,
            Some(&out.config),
        )?;
        sizes.push(("base.idck", fs::metadata(&base_path)?.len()));
        sizes.push(("adapters.idck", fs::metadata(&ad)?.len()));
    }
    write(&a.out.join("loss.csv"), out.loss_csv())?;
    write(&a.out.join("val.csv"), out.val_csv())?;
    write_manifest(&a.out, "train", a, serde_json::to_value(&out.config)?)?;

    let total = out.model.count_params(false);
    let tuned = out.model.count_params(true);
    println!("steps {}  final loss {:.4}", cfg.steps, out.final_loss());
    println!(
        "trainable parameters {} of {} ({:.3}%)",
        tuned.total,
        total.total,
        100.0 * tuned.total as f64 / total.total as f64
    );
    for (name, bytes) in &sizes {
        println!("{name}: {bytes} bytes");
    }
    if let [(_, full), _, (_, ad)] = sizes[..] {
        println!("adapter / full size ratio {:.4}", ad as f64 / full as f64);
    }
    Ok(())
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    write(&dir.join("report.csv"), report.to_csv())?;
    write(&dir.join("report.md"), report.to_markdown())?;
    write(&dir.join("samples.csv"), report.samples_csv())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ckpt = match &a.adapters {
        None => load_checkpoint::<f64>(&a.checkpoint)?,
        Some(ad) => load_adapters(ad, load_checkpoint::<f64>(&a.checkpoint)?.model)?,
    };
    let ds = Dataset::load(&a.data)?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        _ => Split::Test,
    };
    let pairs = load_split(&ds, split)?;
    if pairs.is_empty() {
        bail!("{} has no {} triplets", a.data.display(), a.split);
    }
    let augment = a.augment_seed.map(|s| (&ds.manifest.config.test_augment, s));
    let preds = predict(&ckpt.model, &ckpt.header.vocab, &pairs, decode_mode(a.beam), augment)?;
    let refs = references(&pairs);
    let report = corpus_evaluate(&preds, &refs)?;
    create_dir(&a.out)?;
    write_jsonl(&a.out.join("predictions.jsonl"), &preds)?;
    write_jsonl(&a.out.join("references.jsonl"), &refs)?;
    write_report(&a.out, &report)?;
    write_manifest(&a.out, "eval", &a, serde_json::to_value(&ckpt.header.model)?)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    let preds: Vec<Prediction> = read_jsonl(&a.predictions)?;
    let refs: Vec<Reference> = read_jsonl(&a.references)?;
    let report = corpus_evaluate(&preds, &refs)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_report(dir, &report)?;
        write_manifest(dir, "metrics", &a, Value::Null)?;
    }
    print!("{}", report.to_markdown());
    Ok(())
}

fn write_study(dir: &Path, table: &StudyTable) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join("runs.csv"), table.runs_csv())?;
    write(&dir.join("summary.csv"), table.summary_csv())?;
    write(&dir.join("summary.md"), table.to_markdown())?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn study_cmd(
    name: &str,
    a: StudyArgs,
    f: impl Fn(&TrainConfig, &TrainData, &[u64], DecodeMode) -> Result<StudyTable>,
) -> Result<()> {
    let cfg = resolve(&a.train)?;
    let data = TrainData::load(&cfg.datasets)?;
    let table = f(&cfg, &data, &a.seeds, decode_mode(a.beam))?;
    write_study(&a.out, &table)?;
    write_manifest(&a.out, name, &a, serde_json::to_value(&cfg)?)
}

fn study_aug(a: StudyAugArgs) -> Result<()> {
    let mut overrides = a.study.train;
    overrides.data = vec![a.base.clone()];
    let cfg = resolve(&overrides)?;
    let base = TrainData::load(std::slice::from_ref(&a.base))?;
    let mut all = vec![a.base.clone()];
    all.extend(a.synthetic.iter().cloned());
    let augmented = TrainData::load(&all)?;
    let table = run_augmentation_study(&cfg, &base, &augmented, &a.study.seeds, decode_mode(a.study.beam))?;
    write_study(&a.study.out, &table)?;
    let args = json!({ "study": &overrides, "base": &a.base, "synthetic": &a.synthetic, "seeds": &a.study.seeds });
    write_manifest(&a.study.out, "study-aug", &args, serde_json::to_value(&cfg)?)
}
