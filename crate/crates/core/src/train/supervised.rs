//! End-to-end supervised baseline: encoder + softmax head trained jointly
//! on one labeled task, under the same warmup-cosine Adam protocol as the
//! SSL runs. Its frozen encoder is the input to cross-task transfer
//! evaluation.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};

use super::config::{config_hash, SupervisedConfig, TaskKind};
use super::metrics::{EvalReport, MetricsWriter, RunSummary};
use super::optim::Adam;
use super::probe::{embed_tiles, task_labels};
use super::schedule::lr_schedule;
use super::{to_hex, TrainError};
use crate::data::{augment, stack_tiles, Batcher, ImageTile, PairedSample, ViewKind};
use crate::model::checkpoint::{load_container, save_container, ArrayEntry, CheckpointMeta};
use crate::model::layers::Dense;
use crate::model::probe::softmax;
use crate::model::{EncoderNet, EncoderSpec, ModelError};
use crate::rng::{derive_seed, indexed_stream, stream};

/// A trained classifier: encoder + linear softmax head, plus the task/view
/// it was trained for.
pub struct SupervisedModel {
    pub enc: EncoderNet<f32>,
    pub head: Dense<f32>,
    pub task: TaskKind,
    pub view: ViewKind,
}

impl SupervisedModel {
    pub fn n_classes(&self) -> usize {
        self.head.weight.ncols()
    }

    /// Pooled encoder embedding (the transfer-eval input).
    pub fn embed(&self, x: &Array4<f32>) -> Array2<f32> {
        self.enc.forward(x)
    }

    pub fn logits(&self, x: &Array4<f32>) -> Array2<f32> {
        self.head.forward(&self.enc.forward(x))
    }

    /// SHA-256 over the encoder parameters (freeze-contract witness).
    pub fn encoder_checksum(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        self.enc.visit_ro("", &mut |_, v| {
            for x in v {
                hasher.update(x.to_le_bytes());
            }
        });
        let out = hasher.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&out);
        bytes
    }

    fn param_arrays(&self) -> Vec<ArrayEntry> {
        let mut arrays = Vec::new();
        self.enc
            .visit_ro("enc.", &mut |name, v| arrays.push(ArrayEntry::flat(name, v.to_vec())));
        self.head
            .visit_ro("head", &mut |name, v| arrays.push(ArrayEntry::flat(name, v.to_vec())));
        arrays
    }

    fn visit(&mut self, f: &mut dyn FnMut(String, &mut [f32], &mut [f32])) {
        self.enc.visit("enc.", f);
        self.head.visit("head", f);
    }
}

/// Output of one supervised run.
pub struct SupervisedResult {
    pub model: SupervisedModel,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean cross-entropy per epoch (smoother than single-batch losses).
    pub epoch_mean_loss: Vec<f64>,
    pub steps: usize,
    pub train_report: EvalReport,
    pub test_report: EvalReport,
    pub checkpoint_path: Option<PathBuf>,
    pub summary: RunSummary,
}

fn view_tile(sample: &PairedSample, view: ViewKind) -> &ImageTile {
    match view {
        ViewKind::Sparse => &sample.sparse,
        ViewKind::Dense => &sample.dense,
    }
}

/// Mean cross-entropy and its logit gradient `(softmax - onehot) / B`.
fn cross_entropy(logits: &Array2<f32>, labels: &[usize]) -> (f64, Array2<f32>) {
    let n = logits.nrows();
    debug_assert_eq!(n, labels.len());
    let p = softmax(logits);
    let mut loss = 0.0f64;
    let mut dy = p;
    for (row, &label) in labels.iter().enumerate() {
        loss -= f64::from(dy[(row, label)]).max(1e-30).ln();
        dy[(row, label)] -= 1.0;
    }
    dy /= n as f32;
    (loss / n as f64, dy)
}

/// Trains the supervised baseline. With `out_dir` set, writes `metrics.csv`,
/// `checkpoint.bin`, and `summary.json` there.
pub fn train_supervised(
    cfg: &SupervisedConfig,
    train: &[PairedSample],
    test: &[PairedSample],
    out_dir: Option<&Path>,
) -> Result<SupervisedResult, TrainError> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let hash = config_hash(cfg);
    let (labels_train, labels_test, n_classes) = task_labels(cfg.task, train, test)?;
    if n_classes < 2 {
        return Err(TrainError::BadConfig {
            detail: format!("supervised task has {n_classes} class(es); need at least 2"),
        });
    }
    let batcher = Batcher::new(
        train.len(),
        cfg.batch_size,
        cfg.fraction,
        derive_seed(cfg.seed, "batch"),
    )?;
    let bpe = batcher.batches_per_epoch();
    let total_steps = cfg.epochs * bpe;
    let warmup_steps = ((cfg.warmup_fraction * bpe as f64).round() as usize)
        .clamp(1, total_steps.saturating_sub(1));
    if total_steps < 2 {
        return Err(TrainError::BadConfig {
            detail: format!("run has {total_steps} steps; need at least 2 for the schedule"),
        });
    }

    let spec = EncoderSpec::new(cfg.encoder, cfg.input_px)?;
    let mut model_rng = stream(cfg.seed, "model/supervised");
    let mut model = SupervisedModel {
        enc: spec.build::<f32, _>(&mut model_rng),
        head: Dense::new(&mut model_rng, spec.embedding_dim(), n_classes),
        task: cfg.task,
        view: cfg.view,
    };
    let mut adam = Adam::new();
    let mut metrics = match out_dir {
        Some(dir) => Some(MetricsWriter::create(&dir.join("metrics.csv"))?),
        None => None,
    };

    let mut step = 0usize;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut epoch_mean_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss_sum = 0.0f64;
        let mut aug_rng = indexed_stream(cfg.seed, "augment", epoch as u64);
        for (batch_idx, batch) in batcher.epoch_batches(epoch).into_iter().enumerate() {
            let mut views = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for idx in batch {
                views.push(augment(view_tile(&train[idx], cfg.view), &cfg.augment, &mut aug_rng)?);
                labels.push(labels_train[idx]);
            }
            let x = stack_tiles(&views.iter().collect::<Vec<_>>());
            let (emb, enc_trace) = model.enc.forward_t(&x);
            let (logits, head_trace) = model.head.forward_t(&emb);
            let (loss, dy) = cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                if let Some(dir) = out_dir {
                    let snapshot = serde_json::json!({
                        "step": step, "epoch": epoch, "batch": batch_idx,
                        "components": [["cross_entropy", loss]],
                    });
                    let _ = std::fs::write(
                        dir.join("abort.json"),
                        serde_json::to_string_pretty(&snapshot).expect("snapshot serializes"),
                    );
                }
                return Err(TrainError::NonFinite {
                    step,
                    epoch,
                    batch: batch_idx,
                    components: vec![("cross_entropy".to_string(), loss)],
                });
            }

            model.visit(&mut |_, _, g| g.fill(0.0));
            let demb = model.head.backward(&head_trace, &dy);
            model.enc.backward(&enc_trace, &demb);

            let lr = lr_schedule(step, total_steps, warmup_steps, cfg.lr_max)?;
            adam.begin_step();
            model.visit(&mut |name, param, grad| adam.update(&name, lr, param, grad));

            if let Some(w) = metrics.as_mut() {
                w.write_step(step, lr, loss, &[])?;
            }
            if step == 0 {
                initial_loss = loss;
            }
            final_loss = loss;
            epoch_loss_sum += loss;
            step += 1;
        }
        epoch_mean_loss.push(epoch_loss_sum / bpe as f64);
    }
    if let Some(w) = metrics.take() {
        w.finish()?;
    }

    // Evaluation: stored views, no augmentation.
    let eval = |set: &[PairedSample], labels: &[usize]| -> Result<EvalReport, TrainError> {
        if set.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        let tiles: Vec<&ImageTile> = set.iter().map(|s| view_tile(s, cfg.view)).collect();
        let emb = embed_tiles(&model.enc, &tiles);
        let logits = model.head.forward(&emb);
        let pred: Vec<usize> = logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .expect("at least one class")
            })
            .collect();
        EvalReport::from_predictions(labels, &pred, n_classes)
    };
    let train_report = eval(train, &labels_train)?;
    let test_report = eval(test, &labels_test)?;

    let mut summary = RunSummary {
        kind: "supervised".into(),
        config_hash: hash.clone(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        steps: step,
        initial_loss,
        final_loss,
        wall_clock_s: started.elapsed().as_secs_f64(),
        ..RunSummary::default()
    };
    summary
        .accuracies
        .insert("train".into(), train_report.accuracy);
    summary
        .accuracies
        .insert("test".into(), test_report.accuracy);
    summary
        .epoch_checksums
        .push(to_hex(&model.encoder_checksum()));

    let mut checkpoint_path = None;
    if let Some(dir) = out_dir {
        let meta = CheckpointMeta {
            kind: "supervised".into(),
            epoch: cfg.epochs as u64,
            global_step: step as u64,
            config_hash: hash,
            encoder_arch: cfg.encoder.to_string(),
            input_px: cfg.input_px,
            embedding_dim: spec.embedding_dim(),
            expander_dim: 0,
            shared_weights: false,
            seed: cfg.seed,
            adam_t: adam.t(),
            rng_cursors: [("augment".to_string(), cfg.epochs as u64)].into(),
            extra: [
                ("task".to_string(), cfg.task.to_string()),
                ("view".to_string(), cfg.view.to_string()),
                ("n_classes".to_string(), n_classes.to_string()),
            ]
            .into(),
        };
        let mut arrays = model.param_arrays();
        arrays.extend(adam.to_arrays());
        let path = dir.join("checkpoint.bin");
        save_container(&path, &meta, &arrays)?;
        summary.save(&dir.join("summary.json"))?;
        checkpoint_path = Some(path);
    }

    Ok(SupervisedResult {
        model,
        initial_loss,
        final_loss,
        epoch_mean_loss,
        steps: step,
        train_report,
        test_report,
        checkpoint_path,
        summary,
    })
}

/// Rebuilds a supervised model from a checkpoint written by
/// [`train_supervised`].
pub fn load_supervised(path: &Path) -> Result<(SupervisedModel, CheckpointMeta), TrainError> {
    let (meta, arrays) = load_container(path)?;
    let corrupt = |detail: String| {
        TrainError::Model(ModelError::Corrupt {
            path: path.display().to_string(),
            detail,
        })
    };
    if meta.kind != "supervised" {
        return Err(corrupt(format!(
            "expected a supervised checkpoint, found kind `{}`",
            meta.kind
        )));
    }
    let task: TaskKind = meta
        .extra
        .get("task")
        .ok_or_else(|| corrupt("missing `task` in metadata".into()))?
        .parse()?;
    let view: ViewKind = meta
        .extra
        .get("view")
        .ok_or_else(|| corrupt("missing `view` in metadata".into()))?
        .parse()?;
    let n_classes: usize = meta
        .extra
        .get("n_classes")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("missing or invalid `n_classes` in metadata".into()))?;

    let arch: crate::model::EncoderArch = meta.encoder_arch.parse()?;
    let spec = EncoderSpec::new(arch, meta.input_px)?;
    let mut model_rng = stream(meta.seed, "model/supervised");
    let mut model = SupervisedModel {
        enc: spec.build::<f32, _>(&mut model_rng),
        head: Dense::new(&mut model_rng, spec.embedding_dim(), n_classes),
        task,
        view,
    };
    let by_name: std::collections::BTreeMap<&str, &ArrayEntry> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    let mut result = Ok(());
    model.visit(&mut |name, value, _| {
        if result.is_err() {
            return;
        }
        match by_name.get(name.as_str()) {
            None => result = Err(ModelError::MissingArray { layer: name }),
            Some(a) if a.data.len() != value.len() => {
                result = Err(ModelError::ShapeMismatch {
                    layer: name,
                    expected: value.len(),
                    got: a.data.len(),
                })
            }
            Some(a) => value.copy_from_slice(&a.data),
        }
    });
    result?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, DegradeSpec, Degradation};
    use crate::train::config::ProbeConfig;
    use crate::train::probe::transfer_eval;

    fn desk_cfg(task: TaskKind, seed: u64) -> SupervisedConfig {
        SupervisedConfig {
            input_px: 32,
            batch_size: 32,
            epochs: 4,
            // Smoke-scale runs are ~100 steps; the production default
            // (1e-4 over thousands of steps) barely moves in that budget.
            lr_max: 1e-3,
            encoder: crate::model::EncoderArch::DeskCnnTiny,
            ..SupervisedConfig::desk(task, ViewKind::Dense, seed)
        }
    }

    fn data(seed: u64, n: usize) -> Vec<PairedSample> {
        synth_dataset(seed, n, 32, &DegradeSpec::desk_default(Degradation::Downsample)).unwrap()
    }

    #[test]
    fn desk_run_beats_chance_three_fold_on_tissue() {
        let all = data(200, 512);
        let (train, test) = all.split_at(384);
        let cfg = SupervisedConfig {
            epochs: 25,
            ..desk_cfg(TaskKind::Tissue, 1)
        };
        let run = train_supervised(&cfg, train, test, None).unwrap();
        assert!(
            run.test_report.accuracy >= 3.0 * 0.25,
            "test accuracy {} below 3x chance",
            run.test_report.accuracy
        );
        assert!(run.final_loss < run.initial_loss);
    }

    #[test]
    fn same_seed_reproduces_the_run_bit_for_bit() {
        let all = data(201, 128);
        let (train, test) = all.split_at(96);
        let cfg = desk_cfg(TaskKind::Tissue, 2);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let r1 = train_supervised(&cfg, train, test, Some(d1.path())).unwrap();
        let r2 = train_supervised(&cfg, train, test, Some(d2.path())).unwrap();
        assert_eq!(r1.model.encoder_checksum(), r2.model.encoder_checksum());
        assert_eq!(
            std::fs::read(d1.path().join("checkpoint.bin")).unwrap(),
            std::fs::read(d2.path().join("checkpoint.bin")).unwrap()
        );
        assert_eq!(
            std::fs::read(d1.path().join("metrics.csv")).unwrap(),
            std::fs::read(d2.path().join("metrics.csv")).unwrap()
        );
    }

    #[test]
    fn loss_decreases_over_first_epochs_for_three_seeds() {
        let all = data(202, 256);
        let (train, test) = all.split_at(192);
        for seed in 0..3 {
            let cfg = SupervisedConfig {
                epochs: 3,
                ..desk_cfg(TaskKind::Tissue, seed)
            };
            let run = train_supervised(&cfg, train, test, None).unwrap();
            let first = run.epoch_mean_loss[0];
            let last = *run.epoch_mean_loss.last().unwrap();
            assert!(last < first, "seed {seed}: {last} !< {first}");
        }
    }

    #[test]
    fn checkpoint_roundtrip_restores_model_and_metadata() {
        let all = data(203, 128);
        let (train, test) = all.split_at(96);
        let cfg = desk_cfg(TaskKind::Cell, 3);
        let dir = tempfile::tempdir().unwrap();
        let run = train_supervised(&cfg, train, test, Some(dir.path())).unwrap();
        let (loaded, meta) = load_supervised(&dir.path().join("checkpoint.bin")).unwrap();
        assert_eq!(loaded.encoder_checksum(), run.model.encoder_checksum());
        assert_eq!(loaded.head.weight, run.model.head.weight);
        assert_eq!(meta.kind, "supervised");
        assert_eq!(loaded.task, TaskKind::Cell);
        assert_eq!(loaded.view, ViewKind::Dense);
    }

    #[test]
    fn transfer_runs_both_directions_and_freezes_the_encoder() {
        let all = data(204, 192);
        let (train, test) = all.split_at(128);
        let cfg = desk_cfg(TaskKind::Tissue, 4);
        let run = train_supervised(&cfg, train, test, None).unwrap();
        let before = run.model.encoder_checksum();

        // tissue-trained encoder, probed on cell labels and back on tissue.
        let to_cell = ProbeConfig {
            epochs: 5,
            ..ProbeConfig::desk(TaskKind::Cell, ViewKind::Dense, 0)
        };
        let to_tissue = ProbeConfig {
            epochs: 5,
            ..ProbeConfig::desk(TaskKind::Tissue, ViewKind::Dense, 0)
        };
        let cell = transfer_eval(&run.model, &to_cell, train, test).unwrap();
        let tissue = transfer_eval(&run.model, &to_tissue, train, test).unwrap();
        assert!((0.0..=1.0).contains(&cell.accuracy()));
        assert!((0.0..=1.0).contains(&tissue.accuracy()));
        assert_eq!(before, run.model.encoder_checksum());

        // Degenerate transfer (same task) is deterministic under one seed.
        let again = transfer_eval(&run.model, &to_tissue, train, test).unwrap();
        assert!((tissue.accuracy() - again.accuracy()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_hand_computation() {
        // logits chosen so softmax is easy: row 0 uniform over 2 classes.
        let logits = ndarray::array![[0.0f32, 0.0], [2.0, 0.0]];
        let (loss, dy) = cross_entropy(&logits, &[0, 1]);
        let p1 = 1.0 / (1.0 + (-2.0f64).exp());
        let expect = (-(0.5f64).ln() - (1.0 - p1).ln()) / 2.0;
        assert!((loss - expect).abs() < 1e-6, "{loss} vs {expect}");
        // Gradient rows: (p - onehot)/2.
        assert!((f64::from(dy[(0, 0)]) - (0.5 - 1.0) / 2.0).abs() < 1e-6);
        assert!((f64::from(dy[(1, 0)]) - p1 / 2.0).abs() < 1e-5);
    }
}
