//! Command-line front end: dataset synthesis, SSL/supervised training,
//! probe evaluation, grid sweeps, CKA/saliency analysis, and report
//! assembly.
//!
//! Every training run lives in a subdirectory of the output root named by
//! its 16-hex config hash; a run whose `summary.json` loads is considered
//! complete and is skipped on re-invocation (use `--force` to redo it).
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use crate::analysis::{
    cka_layer_matrix, extract_activations, gradcam, render_cka_image, render_overlay_image,
    render_report, save_image, AnalysisError, EvalArtifact, GradCamTarget,
};
use crate::data::manifest::{load_manifest, Split};
use crate::data::{
    stack_tiles, synth_dataset, write_synth_dataset, DataError, Degradation, ImageTile,
    PairedSample, ViewKind,
};
use crate::model::checkpoint::load_joint;
use crate::model::{EncoderArch, JointModel};
use crate::train::probe::{branch_of, task_labels};
use crate::train::supervised::load_supervised;
use crate::train::{
    config_hash, train_probe, train_ssl, train_supervised, transfer_eval, ExperimentConfig,
    LossKind, ProbeConfig, RunSummary, SupervisedConfig, SupervisedModel, TaskKind, TrainError,
};

/// Environment override for the default output root (`runs`).
pub const OUT_ROOT_ENV: &str = "ASYMDISTIL_OUT_ROOT";
/// Environment override for the default sweep worker count (1).
pub const JOBS_ENV: &str = "ASYMDISTIL_JOBS";

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const SUMMARY_FILE: &str = "summary.json";
const CONFIG_FILE: &str = "config.toml";

#[derive(Parser)]
#[command(
    name = "asymdistil",
    version,
    about = "Two-branch joint-embedding distillation: training, probing, and analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a balanced synthetic dataset (PNG tiles + manifest.csv)
    SynthData(SynthDataArgs),
    /// Pretrain the two-branch model with VICReg or NT-Xent
    TrainSsl(TrainSslArgs),
    /// Train the end-to-end supervised baseline
    TrainSupervised(TrainSupervisedArgs),
    /// Train a linear probe on a frozen SSL encoder
    TrainProbe(TrainProbeArgs),
    /// Evaluate a supervised checkpoint, optionally transferring to the other task
    Eval(EvalArgs),
    /// Layer-wise linear CKA between two SSL runs
    Cka(CkaArgs),
    /// GradCAM heatmap overlays for an SSL run
    Gradcam(GradcamArgs),
    /// Assemble a self-contained report over a run root
    Report(ReportArgs),
    /// Run the 2x2x2 SSL grid plus the supervised baseline
    Sweep(SweepArgs),
}

/// Parses argv and executes; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(CmdError::Usage(e)) => {
            eprintln!("error: {e:#}");
            2
        }
        Err(CmdError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CmdError> {
    match cmd {
        Cmd::SynthData(a) => cmd_synth_data(a),
        Cmd::TrainSsl(a) => cmd_train_ssl(a),
        Cmd::TrainSupervised(a) => cmd_train_supervised(a),
        Cmd::TrainProbe(a) => cmd_train_probe(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Cka(a) => cmd_cka(a),
        Cmd::Gradcam(a) => cmd_gradcam(a),
        Cmd::Report(a) => cmd_report(a),
        Cmd::Sweep(a) => cmd_sweep(a),
    }
}

// ---------------------------------------------------------------------------
// Error classification: config/argument problems exit 2, everything else 1.

enum CmdError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(anyhow::anyhow!(msg.into()))
}

fn train_err(e: TrainError) -> CmdError {
    match &e {
        TrainError::BadConfig { .. } | TrainError::MissingLabels { .. } => {
            CmdError::Usage(e.into())
        }
        TrainError::Data(DataError::BadArg { .. }) => CmdError::Usage(e.into()),
        _ => CmdError::Runtime(e.into()),
    }
}

fn data_err(e: DataError) -> CmdError {
    match &e {
        DataError::BadArg { .. } => CmdError::Usage(e.into()),
        _ => CmdError::Runtime(e.into()),
    }
}

fn analysis_err(e: AnalysisError) -> CmdError {
    match &e {
        AnalysisError::UnknownLayer { .. }
        | AnalysisError::MissingProbe { .. }
        | AnalysisError::BadClass { .. }
        | AnalysisError::DimMismatch { .. }
        | AnalysisError::EmptyProbeSet => CmdError::Usage(e.into()),
        _ => CmdError::Runtime(e.into()),
    }
}

fn runtime_err<E: Into<anyhow::Error>>(e: E) -> CmdError {
    CmdError::Runtime(e.into())
}

// ---------------------------------------------------------------------------
// Shared plumbing: output roots, run directories, datasets, config files.

fn resolve_out_root(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_is_complete(dir: &Path) -> bool {
    RunSummary::load(&dir.join(SUMMARY_FILE)).is_ok()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CmdError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| runtime_err(anyhow::anyhow!("creating {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes)
        .map_err(|e| runtime_err(anyhow::anyhow!("writing {}: {e}", path.display())))
}

/// A run directory passed on the command line must already hold a trained
/// checkpoint; anything else is a caller mistake, not a runtime fault.
fn require_checkpoint(dir: &Path) -> Result<PathBuf, CmdError> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.is_file() {
        return Err(usage(format!(
            "no checkpoint at {} (is this a completed run directory?)",
            path.display()
        )));
    }
    Ok(path)
}

fn read_run_config<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<T, CmdError> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        usage(format!(
            "run directory {} has no readable {CONFIG_FILE}: {e}",
            dir.display()
        ))
    })?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Where the samples come from: a manifest directory, or in-memory
/// synthesis (the default; `--synth-train` samples + `--synth-test` more,
/// generated from `--data-seed` independently of the run seed).
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset directory containing manifest.csv (disables synthesis)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic training samples when --data is absent
    #[arg(long, default_value_t = 4096)]
    synth_train: usize,
    /// Synthetic held-out samples when --data is absent
    #[arg(long, default_value_t = 1024)]
    synth_test: usize,
    /// Seed of the synthetic dataset stream
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl DataArgs {
    fn load(
        &self,
        input_px: usize,
        degrade: &crate::data::DegradeSpec,
    ) -> Result<(Vec<PairedSample>, Vec<PairedSample>), CmdError> {
        let (train, test) = match &self.data {
            Some(dir) => {
                let manifest = load_manifest(&dir.join("manifest.csv")).map_err(data_err)?;
                (
                    manifest.load_split(Split::Train, degrade).map_err(data_err)?,
                    manifest.load_split(Split::Test, degrade).map_err(data_err)?,
                )
            }
            None => {
                let mut all =
                    synth_dataset(self.data_seed, self.synth_train + self.synth_test, input_px, degrade)
                        .map_err(data_err)?;
                let test = all.split_off(self.synth_train.min(all.len()));
                (all, test)
            }
        };
        if train.is_empty() {
            return Err(usage("training split is empty"));
        }
        let (h, w) = (train[0].dense.height(), train[0].dense.width());
        if (h, w) != (input_px, input_px) {
            return Err(usage(format!(
                "dataset tiles are {h}x{w} but the config expects {input_px}x{input_px}"
            )));
        }
        Ok((train, test))
    }

    /// Re-expresses this source as worker-process flags.
    fn to_flags(&self) -> Vec<String> {
        let mut flags = Vec::new();
        if let Some(dir) = &self.data {
            flags.push("--data".into());
            flags.push(dir.display().to_string());
        }
        for (name, value) in [
            ("--synth-train", self.synth_train.to_string()),
            ("--synth-test", self.synth_test.to_string()),
            ("--data-seed", self.data_seed.to_string()),
        ] {
            flags.push(name.into());
            flags.push(value);
        }
        flags
    }
}

fn view_tile(sample: &PairedSample, view: ViewKind) -> &ImageTile {
    match view {
        ViewKind::Sparse => &sample.sparse,
        ViewKind::Dense => &sample.dense,
    }
}

fn confusion_rows(m: &Array2<usize>) -> Vec<Vec<usize>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Merges accuracies into a run's summary.json, preserving everything else.
fn record_accuracies(dir: &Path, entries: &[(String, f64)]) -> Result<(), CmdError> {
    let path = dir.join(SUMMARY_FILE);
    let mut summary = RunSummary::load(&path).map_err(train_err)?;
    for (k, v) in entries {
        summary.accuracies.insert(k.clone(), *v);
    }
    summary.save(&path).map_err(train_err)
}

// ---------------------------------------------------------------------------
// synth-data

#[derive(Args)]
struct SynthDataArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Training samples (balanced round-robin over the 4 tissue classes)
    #[arg(long, default_value_t = 4096)]
    n_train: usize,
    /// Held-out samples
    #[arg(long, default_value_t = 1024)]
    n_test: usize,
    /// Tile side in pixels
    #[arg(long, default_value_t = 64)]
    img_px: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_synth_data(args: SynthDataArgs) -> Result<(), CmdError> {
    if args.img_px < 32 {
        return Err(usage(format!(
            "--img-px {} below the 32 px generator minimum",
            args.img_px
        )));
    }
    let manifest_path =
        write_synth_dataset(&args.out, args.seed, args.n_train, args.n_test, args.img_px)
            .map_err(data_err)?;
    // Round-trip validation: the written tree must load back cleanly.
    let manifest = load_manifest(&manifest_path).map_err(data_err)?;
    println!(
        "wrote {} samples ({} train / {} test, {} tissue classes, {} cell classes) to {}",
        manifest.len(),
        args.n_train,
        args.n_test,
        manifest.tissue_classes().len(),
        manifest.cell_classes().len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-ssl

/// Per-field overrides of [`ExperimentConfig`]; every flag maps 1:1 to the
/// config field of the same name.
#[derive(Args, Debug, Clone, Default)]
struct SslOverrides {
    /// SSL objective: vicreg or simclr
    #[arg(long)]
    loss: Option<LossKind>,
    /// true: branch A sees the sparse view, B the dense view; false: both see --symmetric-source
    #[arg(long)]
    asymmetric: Option<bool>,
    /// Tie the two branches to one parameter set
    #[arg(long)]
    shared_weights: Option<bool>,
    /// Sparse-view construction: crop_pad, downsample, mask, or external_pair
    #[arg(long)]
    degradation: Option<Degradation>,
    #[arg(long)]
    crop_px: Option<usize>,
    #[arg(long)]
    low_px: Option<usize>,
    /// View fed to both branches of a symmetric pair: sparse or dense
    #[arg(long)]
    symmetric_source: Option<ViewKind>,
    /// Encoder: desk_cnn_small, desk_cnn_tiny, or resnet50_shape
    #[arg(long)]
    encoder: Option<EncoderArch>,
    #[arg(long)]
    input_px: Option<usize>,
    #[arg(long)]
    expander_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    /// Fraction of the training split used (fixed subsample per run)
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SslOverrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        set!(
            loss,
            asymmetric,
            shared_weights,
            degradation,
            crop_px,
            low_px,
            symmetric_source,
            encoder,
            input_px,
            expander_dim,
            epochs,
            batch_size,
            lr_max,
            warmup_fraction,
            fraction,
            seed
        );
    }
}

#[derive(Args)]
struct TrainSslArgs {
    /// Base TOML config; flags override individual fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root under which the hash-named run directory is created
    #[arg(long)]
    out_root: Option<PathBuf>,
    /// Re-run even if the run directory is already complete
    #[arg(long)]
    force: bool,
    /// After SSL, train tissue+cell probes on both branches
    #[arg(long)]
    probe: bool,
    #[arg(long, default_value_t = 20)]
    probe_epochs: usize,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    overrides: SslOverrides,
}

fn load_ssl_config(path: &Option<PathBuf>, overrides: &SslOverrides) -> Result<ExperimentConfig, CmdError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text).map_err(train_err)?
        }
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate().map_err(train_err)?;
    Ok(cfg)
}

/// The four standard probes after SSL: {tissue, cell} x {sparse, dense}.
fn standard_probes(epochs: usize, seed: u64) -> Vec<ProbeConfig> {
    let mut out = Vec::new();
    for task in [TaskKind::Tissue, TaskKind::Cell] {
        for branch in [ViewKind::Sparse, ViewKind::Dense] {
            let mut p = ProbeConfig::desk(task, branch, seed);
            p.epochs = epochs;
            out.push(p);
        }
    }
    out
}

fn probe_and_record(
    model: &JointModel,
    dir: &Path,
    pcfg: &ProbeConfig,
    train: &[PairedSample],
    test: &[PairedSample],
) -> Result<f64, CmdError> {
    let result = train_probe(model, pcfg, train, test).map_err(train_err)?;
    let artifact = EvalArtifact {
        task: pcfg.task.to_string(),
        branch: pcfg.branch.to_string(),
        split: "test".into(),
        accuracy: result.test_report.accuracy,
        n_classes: result.n_classes,
        confusion: confusion_rows(&result.test_report.confusion),
    };
    artifact.save(dir).map_err(analysis_err)?;
    let prefix = format!("probe_{}_{}", pcfg.task, pcfg.branch);
    record_accuracies(
        dir,
        &[
            (format!("{prefix}_train"), result.train_report.accuracy),
            (format!("{prefix}_test"), result.test_report.accuracy),
        ],
    )?;
    Ok(result.test_report.accuracy)
}

fn cmd_train_ssl(args: TrainSslArgs) -> Result<(), CmdError> {
    let cfg = load_ssl_config(&args.config, &args.overrides)?;
    let hash = config_hash(&cfg);
    let dir = resolve_out_root(&args.out_root).join(&hash);
    let probes = standard_probes(args.probe_epochs, cfg.seed);

    let complete = !args.force && run_is_complete(&dir);
    let probes_done = |dir: &Path| -> bool {
        RunSummary::load(&dir.join(SUMMARY_FILE)).is_ok_and(|s| {
            probes
                .iter()
                .all(|p| s.accuracies.contains_key(&format!("probe_{}_{}_test", p.task, p.branch)))
        })
    };

    if complete && (!args.probe || probes_done(&dir)) {
        println!("skip {hash}: run complete at {}", dir.display());
        return Ok(());
    }

    let (train, test) = args.data.load(cfg.input_px, &cfg.degrade_spec())?;

    let model = if complete {
        // Resume: SSL finished earlier; only the probes are missing.
        let (model, _, _) = load_joint(&dir.join(CHECKPOINT_FILE)).map_err(runtime_err)?;
        println!("resume {hash}: checkpoint present, training probes");
        model
    } else {
        write_file(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
        let result = train_ssl(&cfg, &train, Some(&dir)).map_err(train_err)?;
        println!(
            "run {hash}: {} steps, loss {:.4} -> {:.4}",
            result.steps, result.initial_loss, result.final_loss
        );
        result.model
    };

    if args.probe {
        for pcfg in &probes {
            let acc = probe_and_record(&model, &dir, pcfg, &train, &test)?;
            println!("probe {} {}: test accuracy {acc:.4}", pcfg.task, pcfg.branch);
        }
    }
    println!("done {}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-supervised

/// Per-field overrides of [`SupervisedConfig`] (1:1 with config fields).
#[derive(Args, Debug, Clone, Default)]
struct SupervisedOverrides {
    /// Classification target: tissue or cell
    #[arg(long)]
    task: Option<TaskKind>,
    /// Input view the classifier trains on: sparse or dense
    #[arg(long)]
    view: Option<ViewKind>,
    #[arg(long)]
    degradation: Option<Degradation>,
    #[arg(long)]
    crop_px: Option<usize>,
    #[arg(long)]
    low_px: Option<usize>,
    #[arg(long)]
    encoder: Option<EncoderArch>,
    #[arg(long)]
    input_px: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SupervisedOverrides {
    fn apply(&self, cfg: &mut SupervisedConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        set!(
            task,
            view,
            degradation,
            crop_px,
            low_px,
            encoder,
            input_px,
            epochs,
            batch_size,
            lr_max,
            warmup_fraction,
            fraction,
            seed
        );
    }
}

#[derive(Args)]
struct TrainSupervisedArgs {
    /// Base TOML config; flags override individual fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_root: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    overrides: SupervisedOverrides,
}

fn cmd_train_supervised(args: TrainSupervisedArgs) -> Result<(), CmdError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str::<SupervisedConfig>(&text)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SupervisedConfig::default(),
    };
    args.overrides.apply(&mut cfg);
    cfg.validate().map_err(train_err)?;

    let hash = config_hash(&cfg);
    let dir = resolve_out_root(&args.out_root).join(&hash);
    if !args.force && run_is_complete(&dir) {
        println!("skip {hash}: run complete at {}", dir.display());
        return Ok(());
    }

    let (train, test) = args.data.load(cfg.input_px, &cfg.degrade_spec())?;
    write_file(&dir.join(CONFIG_FILE), toml::to_string_pretty(&cfg).expect("config serializes").as_bytes())?;
    let result = train_supervised(&cfg, &train, &test, Some(&dir)).map_err(train_err)?;
    let artifact = EvalArtifact {
        task: cfg.task.to_string(),
        branch: cfg.view.to_string(),
        split: "test".into(),
        accuracy: result.test_report.accuracy,
        n_classes: result.model.n_classes(),
        confusion: confusion_rows(&result.test_report.confusion),
    };
    artifact.save(&dir).map_err(analysis_err)?;
    println!(
        "run {hash}: {} steps, loss {:.4} -> {:.4}, test accuracy {:.4}",
        result.steps, result.initial_loss, result.final_loss, result.test_report.accuracy
    );
    println!("done {}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-probe

#[derive(Args)]
struct TrainProbeArgs {
    /// SSL run directory (holds checkpoint.bin and config.toml)
    #[arg(long)]
    run: PathBuf,
    /// Probe task: tissue or cell
    #[arg(long, default_value = "tissue")]
    task: TaskKind,
    /// Probed branch's stored view: sparse (branch A) or dense (branch B)
    #[arg(long, default_value = "sparse")]
    branch: ViewKind,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Probe seed; defaults to the run's training seed
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    data: DataArgs,
}

fn cmd_train_probe(args: TrainProbeArgs) -> Result<(), CmdError> {
    let cfg: ExperimentConfig = read_run_config(&args.run)?;
    let (model, meta, _) = load_joint(&require_checkpoint(&args.run)?).map_err(runtime_err)?;
    let pcfg = ProbeConfig {
        task: args.task,
        branch: args.branch,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed.unwrap_or(meta.seed),
    };
    let (train, test) = args.data.load(cfg.input_px, &cfg.degrade_spec())?;
    let acc = probe_and_record(&model, &args.run, &pcfg, &train, &test)?;
    println!("probe {} {}: test accuracy {acc:.4}", pcfg.task, pcfg.branch);
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args)]
struct EvalArgs {
    /// Supervised run directory (holds checkpoint.bin and config.toml)
    #[arg(long)]
    run: PathBuf,
    /// Evaluation task; differing from the checkpoint's task triggers a
    /// frozen-encoder transfer (a fresh head is trained on the new task)
    #[arg(long)]
    task: Option<TaskKind>,
    /// Head-retraining epochs for transfer evaluation
    #[arg(long, default_value_t = 20)]
    probe_epochs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    data: DataArgs,
}

fn predict_supervised(model: &SupervisedModel, tiles: &[&ImageTile]) -> Vec<usize> {
    let mut preds = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(64) {
        let logits = model.logits(&stack_tiles(chunk));
        for row in logits.rows() {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("nonempty row");
            preds.push(best);
        }
    }
    preds
}

fn cmd_eval(args: EvalArgs) -> Result<(), CmdError> {
    let cfg: SupervisedConfig = read_run_config(&args.run)?;
    let (model, meta) = load_supervised(&require_checkpoint(&args.run)?).map_err(train_err)?;
    let (train, test) = args.data.load(cfg.input_px, &cfg.degrade_spec())?;
    let task = args.task.unwrap_or(model.task);

    if task == model.task {
        // Direct evaluation of the trained head on the held-out split.
        let (_, labels_test, _) = task_labels(task, &train, &test).map_err(train_err)?;
        let tiles: Vec<&ImageTile> = test.iter().map(|s| view_tile(s, model.view)).collect();
        let preds = predict_supervised(&model, &tiles);
        let report = crate::train::EvalReport::from_predictions(&labels_test, &preds, model.n_classes())
            .map_err(train_err)?;
        let artifact = EvalArtifact {
            task: task.to_string(),
            branch: model.view.to_string(),
            split: "test".into(),
            accuracy: report.accuracy,
            n_classes: model.n_classes(),
            confusion: confusion_rows(&report.confusion),
        };
        artifact.save(&args.run).map_err(analysis_err)?;
        record_accuracies(&args.run, &[(format!("eval_{task}_test"), report.accuracy)])?;
        println!("eval {task}: test accuracy {:.4}", report.accuracy);
    } else {
        // Cross-task transfer: freeze the encoder, retrain the head.
        let pcfg = ProbeConfig {
            task,
            branch: model.view,
            epochs: args.probe_epochs,
            batch_size: 64,
            lr: 1e-3,
            seed: args.seed.unwrap_or(meta.seed),
        };
        let result = transfer_eval(&model, &pcfg, &train, &test).map_err(train_err)?;
        let artifact = EvalArtifact {
            task: format!("transfer_{task}"),
            branch: model.view.to_string(),
            split: "test".into(),
            accuracy: result.test_report.accuracy,
            n_classes: result.n_classes,
            confusion: confusion_rows(&result.test_report.confusion),
        };
        artifact.save(&args.run).map_err(analysis_err)?;
        record_accuracies(
            &args.run,
            &[
                (format!("transfer_{task}_train"), result.train_report.accuracy),
                (format!("transfer_{task}_test"), result.test_report.accuracy),
            ],
        )?;
        println!(
            "transfer {} -> {task}: test accuracy {:.4}",
            model.task, result.test_report.accuracy
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cka

#[derive(Args)]
struct CkaArgs {
    /// First SSL run directory
    #[arg(long)]
    run_a: PathBuf,
    /// Second SSL run directory
    #[arg(long)]
    run_b: PathBuf,
    /// Branch of the first model: sparse or dense
    #[arg(long, default_value = "sparse")]
    branch_a: ViewKind,
    /// Branch of the second model: sparse or dense
    #[arg(long, default_value = "sparse")]
    branch_b: ViewKind,
    /// View fed to both encoders
    #[arg(long, default_value = "sparse")]
    view: ViewKind,
    /// Probe-set size drawn from the held-out split
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Comma-separated tap names (default: every tap of each encoder)
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<String>>,
    /// Output directory (default: the first run's directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pixel size of one matrix cell in the rendered image
    #[arg(long, default_value_t = 32)]
    cell_px: usize,
    #[command(flatten)]
    data: DataArgs,
}

fn load_joint_run(dir: &Path) -> Result<(JointModel, ExperimentConfig, String), CmdError> {
    let cfg: ExperimentConfig = read_run_config(dir)?;
    let (model, meta, _) = load_joint(&require_checkpoint(dir)?).map_err(runtime_err)?;
    if meta.kind != "joint" {
        return Err(usage(format!(
            "{} holds a `{}` checkpoint; this command needs an SSL run",
            dir.display(),
            meta.kind
        )));
    }
    Ok((model, cfg, meta.config_hash))
}

fn cmd_cka(args: CkaArgs) -> Result<(), CmdError> {
    let (model_a, cfg_a, hash_a) = load_joint_run(&args.run_a)?;
    let (model_b, cfg_b, hash_b) = load_joint_run(&args.run_b)?;
    if cfg_a.input_px != cfg_b.input_px {
        return Err(usage(format!(
            "input sizes differ: {} px vs {} px",
            cfg_a.input_px, cfg_b.input_px
        )));
    }
    let (_, test) = args.data.load(cfg_a.input_px, &cfg_a.degrade_spec())?;
    if test.len() < args.n {
        return Err(usage(format!(
            "probe set needs {} samples but the held-out split has {}",
            args.n,
            test.len()
        )));
    }
    let tiles: Vec<&ImageTile> = test[..args.n].iter().map(|s| view_tile(s, args.view)).collect();

    let enc_a = model_a.encoder(branch_of(args.branch_a));
    let enc_b = model_b.encoder(branch_of(args.branch_b));
    let layer_list = |enc: &crate::model::EncoderNet<f32>| -> Vec<String> {
        args.layers
            .clone()
            .unwrap_or_else(|| enc.spec().taps().into_iter().map(|(n, _)| n).collect())
    };
    let acts_a =
        extract_activations(enc_a, &layer_list(enc_a), &tiles, &hash_a).map_err(analysis_err)?;
    let acts_b =
        extract_activations(enc_b, &layer_list(enc_b), &tiles, &hash_b).map_err(analysis_err)?;
    let matrix = cka_layer_matrix(&acts_a, &acts_b).map_err(analysis_err)?;

    let out_dir = args.out.clone().unwrap_or_else(|| args.run_a.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| runtime_err(anyhow::anyhow!("creating {}: {e}", out_dir.display())))?;
    let stem = format!("cka_{hash_a}_{hash_b}");
    let csv_path = out_dir.join(format!("{stem}.csv"));
    matrix.save_csv(&csv_path).map_err(analysis_err)?;
    let png_path = out_dir.join(format!("{stem}.png"));
    save_image(&render_cka_image(&matrix, args.cell_px), &png_path).map_err(analysis_err)?;
    println!(
        "cka {hash_a} vs {hash_b}: mean diagonal {:.4}; wrote {} and {}",
        matrix.mean_diagonal(),
        csv_path.display(),
        png_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcam

fn parse_target(s: &str) -> Result<GradCamTarget, String> {
    match s {
        "predicted" | "predicted-class" => Ok(GradCamTarget::PredictedClass),
        "embedding" | "embedding-norm" => Ok(GradCamTarget::EmbeddingNorm),
        other => other
            .strip_prefix("class:")
            .and_then(|n| n.parse().ok())
            .map(GradCamTarget::ClassId)
            .ok_or_else(|| {
                format!("unknown target `{other}` (expected predicted, embedding, or class:K)")
            }),
    }
}

#[derive(Args)]
struct GradcamArgs {
    /// SSL run directory
    #[arg(long)]
    run: PathBuf,
    /// Conv tap to explain (default: the encoder's last tap)
    #[arg(long)]
    layer: Option<String>,
    /// Scalar target: predicted, embedding, or class:K
    #[arg(long, value_parser = parse_target, default_value = "predicted")]
    target: GradCamTarget,
    /// Branch whose encoder is explained
    #[arg(long, default_value = "sparse")]
    branch: ViewKind,
    /// Probe task backing class targets
    #[arg(long, default_value = "tissue")]
    task: TaskKind,
    #[arg(long, default_value_t = 20)]
    probe_epochs: usize,
    /// Number of held-out images to render
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    data: DataArgs,
}

fn cmd_gradcam(args: GradcamArgs) -> Result<(), CmdError> {
    let (mut model, cfg, hash) = load_joint_run(&args.run)?;
    let (train, test) = args.data.load(cfg.input_px, &cfg.degrade_spec())?;
    if test.len() < args.count {
        return Err(usage(format!(
            "--count {} exceeds the held-out split ({} samples)",
            args.count,
            test.len()
        )));
    }
    let branch = branch_of(args.branch);
    let layer = args.layer.clone().unwrap_or_else(|| {
        let taps = model.encoder(branch).spec().taps();
        taps.last().expect("every encoder has taps").0.clone()
    });

    // Class targets need a trained head; fit one on the frozen encoder.
    let probe = match args.target {
        GradCamTarget::EmbeddingNorm => None,
        _ => {
            let pcfg = ProbeConfig {
                task: args.task,
                branch: args.branch,
                epochs: args.probe_epochs,
                batch_size: 64,
                lr: 1e-3,
                seed: args.seed.unwrap_or(cfg.seed),
            };
            Some(train_probe(&model, &pcfg, &train, &test).map_err(train_err)?.probe)
        }
    };

    let enc = model.encoder_mut(branch);
    let mut zero_flagged = 0usize;
    for (i, sample) in test[..args.count].iter().enumerate() {
        let tile = view_tile(sample, args.branch);
        let hm = gradcam(enc, probe.as_ref(), tile, &layer, args.target).map_err(analysis_err)?;
        if hm.zero {
            zero_flagged += 1;
        }
        let overlay = render_overlay_image(tile, &hm).map_err(analysis_err)?;
        let name = format!("gradcam_{}_{}_{}_{i:02}.png", args.branch, layer, hm.target);
        save_image(&overlay, &args.run.join(name)).map_err(analysis_err)?;
    }
    println!(
        "gradcam {hash}: wrote {} overlays (layer {layer}, branch {}){}",
        args.count,
        args.branch,
        if zero_flagged > 0 {
            format!("; {zero_flagged} zero heatmaps flagged")
        } else {
            String::new()
        }
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report

#[derive(Args)]
struct ReportArgs {
    /// Run root to scan
    #[arg(long)]
    root: Option<PathBuf>,
    /// Report directory (default: <root>/report)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_report(args: ReportArgs) -> Result<(), CmdError> {
    let root = resolve_out_root(&args.root);
    let out = args.out.clone().unwrap_or_else(|| root.join("report"));
    let written = render_report(&root, &out).map_err(analysis_err)?;
    println!("report: {} files in {}", written.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    out_root: Option<PathBuf>,
    /// Concurrent worker processes (env ASYMDISTIL_JOBS; default 1)
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// SSL and supervised epochs per run
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr_max: f64,
    #[arg(long, default_value = "desk_cnn_small")]
    encoder: EncoderArch,
    #[arg(long, default_value_t = 64)]
    input_px: usize,
    /// Sparse-view construction shared by the whole grid
    #[arg(long, default_value = "downsample")]
    degradation: Degradation,
    #[arg(long, default_value_t = 20)]
    probe_epochs: usize,
    /// Supervised baseline task
    #[arg(long, default_value = "tissue")]
    sup_task: TaskKind,
    /// Supervised baseline view
    #[arg(long, default_value = "dense")]
    sup_view: ViewKind,
    #[command(flatten)]
    data: DataArgs,
}

struct WorkItem {
    name: String,
    config_hash: String,
    args: Vec<String>,
}

#[derive(Serialize)]
struct SweepRunRecord {
    name: String,
    config_hash: String,
    dir: String,
    ok: bool,
    exit_code: Option<i32>,
}

fn sweep_grid(args: &SweepArgs, root: &Path) -> Vec<WorkItem> {
    let root_s = root.display().to_string();
    let common_ssl = |cfg: &ExperimentConfig| -> Vec<String> {
        vec![
            "train-ssl".into(),
            "--out-root".into(),
            root_s.clone(),
            "--probe".into(),
            "--probe-epochs".into(),
            args.probe_epochs.to_string(),
            "--loss".into(),
            cfg.loss.to_string(),
            "--asymmetric".into(),
            cfg.asymmetric.to_string(),
            "--shared-weights".into(),
            cfg.shared_weights.to_string(),
            "--degradation".into(),
            cfg.degradation.to_string(),
            "--encoder".into(),
            cfg.encoder.to_string(),
            "--input-px".into(),
            cfg.input_px.to_string(),
            "--epochs".into(),
            cfg.epochs.to_string(),
            "--batch-size".into(),
            cfg.batch_size.to_string(),
            "--lr-max".into(),
            cfg.lr_max.to_string(),
            "--seed".into(),
            cfg.seed.to_string(),
        ]
    };

    let mut items = Vec::new();
    for loss in [LossKind::Vicreg, LossKind::Simclr] {
        for asymmetric in [true, false] {
            for shared in [true, false] {
                let mut cfg =
                    ExperimentConfig::desk(loss, asymmetric, shared, args.degradation, args.seed);
                cfg.epochs = args.epochs;
                cfg.batch_size = args.batch_size;
                cfg.lr_max = args.lr_max;
                cfg.encoder = args.encoder;
                cfg.input_px = args.input_px;
                let mut flags = common_ssl(&cfg);
                flags.extend(args.data.to_flags());
                items.push(WorkItem {
                    name: format!(
                        "{loss}_{}_{}",
                        if asymmetric { "asym" } else { "sym" },
                        if shared { "shared" } else { "separate" }
                    ),
                    config_hash: config_hash(&cfg),
                    args: flags,
                });
            }
        }
    }

    let mut sup = SupervisedConfig::desk(args.sup_task, args.sup_view, args.seed);
    sup.epochs = args.epochs;
    sup.batch_size = args.batch_size;
    sup.lr_max = args.lr_max;
    sup.encoder = args.encoder;
    sup.input_px = args.input_px;
    sup.degradation = args.degradation;
    let mut flags = vec![
        "train-supervised".into(),
        "--out-root".into(),
        root_s,
        "--task".into(),
        sup.task.to_string(),
        "--view".into(),
        sup.view.to_string(),
        "--degradation".into(),
        sup.degradation.to_string(),
        "--encoder".into(),
        sup.encoder.to_string(),
        "--input-px".into(),
        sup.input_px.to_string(),
        "--epochs".into(),
        sup.epochs.to_string(),
        "--batch-size".into(),
        sup.batch_size.to_string(),
        "--lr-max".into(),
        sup.lr_max.to_string(),
        "--seed".into(),
        sup.seed.to_string(),
    ];
    flags.extend(args.data.to_flags());
    items.push(WorkItem {
        name: format!("supervised_{}_{}", sup.task, sup.view),
        config_hash: config_hash(&sup),
        args: flags,
    });
    items
}

fn spawn_worker(exe: &Path, item: &WorkItem, log_dir: &Path) -> std::io::Result<std::process::Child> {
    let log = std::fs::File::create(log_dir.join(format!("{}.log", item.name)))?;
    let log_err = log.try_clone()?;
    Command::new(exe)
        .args(&item.args)
        .stdin(Stdio::null())
        .stdout(Stdio::from(log))
        .stderr(Stdio::from(log_err))
        .spawn()
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CmdError> {
    let root = resolve_out_root(&args.out_root);
    let jobs = args
        .jobs
        .or_else(|| std::env::var(JOBS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1)
        .max(1);
    let exe = std::env::current_exe()
        .map_err(|e| runtime_err(anyhow::anyhow!("cannot locate own executable: {e}")))?;
    let log_dir = root.join("logs");
    std::fs::create_dir_all(&log_dir)
        .map_err(|e| runtime_err(anyhow::anyhow!("creating {}: {e}", log_dir.display())))?;

    let mut pending: VecDeque<WorkItem> = sweep_grid(&args, &root).into();
    let total = pending.len();
    println!("sweep: {total} runs, {jobs} worker(s), root {}", root.display());

    let mut active: Vec<(WorkItem, std::process::Child)> = Vec::new();
    let mut records: Vec<SweepRunRecord> = Vec::new();
    let finish = |item: WorkItem, code: Option<i32>, records: &mut Vec<SweepRunRecord>| {
        let ok = code == Some(0);
        println!(
            "[{}] {} ({})",
            if ok { "ok" } else { "FAILED" },
            item.name,
            item.config_hash
        );
        records.push(SweepRunRecord {
            name: item.name,
            config_hash: item.config_hash.clone(),
            dir: item.config_hash,
            ok,
            exit_code: code,
        });
    };

    while !pending.is_empty() || !active.is_empty() {
        while active.len() < jobs {
            let Some(item) = pending.pop_front() else { break };
            match spawn_worker(&exe, &item, &log_dir) {
                Ok(child) => active.push((item, child)),
                Err(e) => {
                    eprintln!("spawn failed for {}: {e}", item.name);
                    finish(item, None, &mut records);
                }
            }
        }
        let mut i = 0;
        while i < active.len() {
            match active[i].1.try_wait() {
                Ok(Some(status)) => {
                    let (item, _) = active.swap_remove(i);
                    finish(item, status.code(), &mut records);
                }
                Ok(None) => i += 1,
                Err(e) => {
                    let (item, mut child) = active.swap_remove(i);
                    let _ = child.kill();
                    eprintln!("wait failed for {}: {e}", item.name);
                    finish(item, None, &mut records);
                }
            }
        }
        if !active.is_empty() {
            std::thread::sleep(std::time::Duration::from_millis(25));
        }
    }

    records.sort_by(|a, b| a.name.cmp(&b.name));
    let summary_json = serde_json::to_string_pretty(&records).expect("records serialize");
    write_file(&root.join("sweep_summary.json"), summary_json.as_bytes())?;

    // Consolidated comparison table over whatever completed.
    let report_dir = root.join("report");
    let written = render_report(&root, &report_dir).map_err(analysis_err)?;
    println!("report: {} files in {}", written.len(), report_dir.display());

    let failed = records.iter().filter(|r| !r.ok).count();
    if failed > 0 {
        return Err(CmdError::Runtime(anyhow::anyhow!(
            "{failed} of {total} runs failed (see sweep_summary.json and logs/)"
        )));
    }
    println!("sweep complete: {total} runs");
    Ok(())
}
