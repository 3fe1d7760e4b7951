//! Linear probing of frozen encoders, and cross-task transfer evaluation.
//!
//! A probe is a single softmax layer trained on *encoder* embeddings (never
//! expander outputs) with the encoder left untouched: probing code only ever
//! holds an immutable borrow of the model, so the freeze contract is enforced
//! by the type system and double-checked by checksum tests. Probe inputs are
//! un-augmented stored views.

use ndarray::{s, Array2, Axis};

use super::config::{ProbeConfig, TaskKind};
use super::metrics::EvalReport;
use super::optim::Adam;
use super::supervised::SupervisedModel;
use super::TrainError;
use crate::data::{stack_tiles, Batcher, ImageTile, PairedSample, ViewKind};
use crate::model::probe::softmax;
use crate::model::{Branch, EncoderNet, JointModel, LinearProbe};
use crate::rng::{derive_seed, stream};

/// The branch whose encoder consumes a given stored view.
pub fn branch_of(view: ViewKind) -> Branch {
    match view {
        ViewKind::Sparse => Branch::A,
        ViewKind::Dense => Branch::B,
    }
}

fn tile_of(sample: &PairedSample, view: ViewKind) -> &ImageTile {
    match view {
        ViewKind::Sparse => &sample.sparse,
        ViewKind::Dense => &sample.dense,
    }
}

/// Extracts 0-based dense labels for `task` jointly over the train and test
/// splits (so both share one class table), plus the class count.
///
/// Raw label ids are remapped through the sorted table of distinct observed
/// values; this keeps the probe head as small as the label space actually
/// in use (e.g. categorical mask ids that never include the background id).
pub(crate) fn task_labels(
    task: TaskKind,
    train: &[PairedSample],
    test: &[PairedSample],
) -> Result<(Vec<usize>, Vec<usize>, usize), TrainError> {
    let raw_of = |s: &PairedSample| -> Result<usize, TrainError> {
        match task {
            TaskKind::Tissue => Ok(s.tissue_label),
            TaskKind::Cell => s.cell_label.ok_or_else(|| TrainError::MissingLabels {
                task: task.to_string(),
            }),
        }
    };
    let raw_train: Vec<usize> = train.iter().map(raw_of).collect::<Result<_, _>>()?;
    let raw_test: Vec<usize> = test.iter().map(raw_of).collect::<Result<_, _>>()?;
    let mut table: Vec<usize> = raw_train.iter().chain(&raw_test).copied().collect();
    table.sort_unstable();
    table.dedup();
    if table.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let map = |raw: &[usize]| {
        raw.iter()
            .map(|v| table.binary_search(v).expect("value came from the table"))
            .collect()
    };
    Ok((map(&raw_train), map(&raw_test), table.len()))
}

/// Encoder embeddings of a tile list, computed in fixed-size chunks.
pub(crate) fn embed_tiles(enc: &EncoderNet<f32>, tiles: &[&ImageTile]) -> Array2<f32> {
    const CHUNK: usize = 64;
    let mut out = Array2::zeros((tiles.len(), enc.embedding_dim()));
    for (ci, chunk) in tiles.chunks(CHUNK).enumerate() {
        let x = stack_tiles(chunk);
        let emb = enc.forward(&x);
        out.slice_mut(s![ci * CHUNK..ci * CHUNK + chunk.len(), ..])
            .assign(&emb);
    }
    out
}

/// Embeds each sample's stored `view` tile with the matching branch encoder
/// (sparse → branch A, dense → branch B). No augmentation is applied.
pub fn embed_samples(
    model: &JointModel,
    view: ViewKind,
    samples: &[PairedSample],
) -> Result<Array2<f32>, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let tiles: Vec<&ImageTile> = samples.iter().map(|s| tile_of(s, view)).collect();
    Ok(embed_tiles(model.encoder(branch_of(view)), &tiles))
}

/// Trains a softmax probe on fixed embeddings with Adam at a constant
/// learning rate. Deterministic in `(embeddings, labels, pcfg)`.
pub fn fit_probe(
    embeddings: &Array2<f32>,
    labels: &[usize],
    n_classes: usize,
    pcfg: &ProbeConfig,
) -> Result<LinearProbe, TrainError> {
    pcfg.validate()?;
    let n = embeddings.nrows();
    if n == 0 {
        return Err(TrainError::EmptySplit);
    }
    if labels.len() != n {
        return Err(TrainError::BadConfig {
            detail: format!("{} embeddings vs {} labels", n, labels.len()),
        });
    }
    if n_classes < 2 {
        return Err(TrainError::BadConfig {
            detail: format!("probe needs at least 2 classes, got {n_classes}"),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(TrainError::BadConfig {
            detail: format!("label {bad} out of range for {n_classes} classes"),
        });
    }

    let mut probe = LinearProbe::new(
        &mut stream(pcfg.seed, "probe/init"),
        embeddings.ncols(),
        n_classes,
    );
    let mut adam = Adam::new();
    let batcher = Batcher::new(
        n,
        pcfg.batch_size.min(n),
        1.0,
        derive_seed(pcfg.seed, "probe"),
    )?;
    for epoch in 0..pcfg.epochs {
        for batch in batcher.epoch_batches(epoch) {
            let x = embeddings.select(Axis(0), &batch);
            let (logits, trace) = probe.fc.forward_t(&x);
            // d(mean cross-entropy)/d logits = (softmax - onehot) / B.
            let mut dy = softmax(&logits);
            for (row, &i) in batch.iter().enumerate() {
                dy[(row, labels[i])] -= 1.0;
            }
            dy /= batch.len() as f32;
            probe.fc.visit("probe", &mut |_, _, g| g.fill(0.0));
            probe.fc.backward(&trace, &dy);
            adam.begin_step();
            probe
                .fc
                .visit("probe", &mut |name, p, g| adam.update(&name, pcfg.lr, p, g));
        }
    }
    Ok(probe)
}

/// Top-1 accuracy and confusion matrix of a probe on fixed embeddings.
pub fn evaluate_probe(
    probe: &LinearProbe,
    embeddings: &Array2<f32>,
    labels: &[usize],
    n_classes: usize,
) -> Result<EvalReport, TrainError> {
    let pred = probe.predict(embeddings);
    EvalReport::from_predictions(labels, &pred, n_classes)
}

/// A trained probe with its evaluations on both splits.
pub struct ProbeResult {
    pub probe: LinearProbe,
    pub n_classes: usize,
    pub train_report: EvalReport,
    pub test_report: EvalReport,
}

impl ProbeResult {
    /// Held-out top-1 accuracy (the headline number).
    pub fn accuracy(&self) -> f64 {
        self.test_report.accuracy
    }
}

fn probe_on_embeddings(
    pcfg: &ProbeConfig,
    emb_train: &Array2<f32>,
    emb_test: &Array2<f32>,
    labels_train: &[usize],
    labels_test: &[usize],
    n_classes: usize,
) -> Result<ProbeResult, TrainError> {
    let probe = fit_probe(emb_train, labels_train, n_classes, pcfg)?;
    let train_report = evaluate_probe(&probe, emb_train, labels_train, n_classes)?;
    let test_report = evaluate_probe(&probe, emb_test, labels_test, n_classes)?;
    Ok(ProbeResult {
        probe,
        n_classes,
        train_report,
        test_report,
    })
}

/// Probes one branch of a frozen joint model on `pcfg.task`.
pub fn train_probe(
    model: &JointModel,
    pcfg: &ProbeConfig,
    train: &[PairedSample],
    test: &[PairedSample],
) -> Result<ProbeResult, TrainError> {
    let (labels_train, labels_test, n_classes) = task_labels(pcfg.task, train, test)?;
    let emb_train = embed_samples(model, pcfg.branch, train)?;
    let emb_test = embed_samples(model, pcfg.branch, test)?;
    probe_on_embeddings(
        pcfg,
        &emb_train,
        &emb_test,
        &labels_train,
        &labels_test,
        n_classes,
    )
}

/// Freezes a supervised model's encoder (trained on its own task) and fits a
/// fresh probe on `pcfg.task` — the cross-task transfer measurement. The
/// probe consumes the same stored view the supervised encoder was trained on;
/// `pcfg.branch` is ignored.
pub fn transfer_eval(
    source: &SupervisedModel,
    pcfg: &ProbeConfig,
    train: &[PairedSample],
    test: &[PairedSample],
) -> Result<ProbeResult, TrainError> {
    let (labels_train, labels_test, n_classes) = task_labels(pcfg.task, train, test)?;
    if train.is_empty() || test.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let tiles_train: Vec<&ImageTile> = train.iter().map(|s| tile_of(s, source.view)).collect();
    let tiles_test: Vec<&ImageTile> = test.iter().map(|s| tile_of(s, source.view)).collect();
    let emb_train = embed_tiles(&source.enc, &tiles_train);
    let emb_test = embed_tiles(&source.enc, &tiles_test);
    probe_on_embeddings(
        pcfg,
        &emb_train,
        &emb_test,
        &labels_train,
        &labels_test,
        n_classes,
    )
}
