//! Self-supervised pretraining of the two-branch joint-embedding model.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::config::{config_hash, ExperimentConfig, LossKind};
use super::metrics::{MetricsWriter, RunSummary};
use super::optim::Adam;
use super::schedule::lr_schedule;
use super::{to_hex, TrainError};
use crate::data::{make_pair, stack_tiles, Batcher, PairedSample};
use crate::loss::{nt_xent_loss_grad, vicreg_loss_grad, LossError};
use crate::model::checkpoint::{joint_param_arrays, save_container, CheckpointMeta};
use crate::model::{Branch, JointModel};
use crate::rng::{derive_seed, indexed_stream};

/// Output of one SSL run.
pub struct SslRunResult {
    pub model: JointModel,
    pub adam: Adam,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    /// (branch A, branch B) parameter checksums recorded after every epoch.
    pub epoch_checksums: Vec<(String, String)>,
    pub checkpoint_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    pub summary: RunSummary,
}

fn loss_and_grads(
    cfg: &ExperimentConfig,
    za: &Array2<f32>,
    zb: &Array2<f32>,
) -> Result<(f64, Vec<(String, f64)>, Array2<f32>, Array2<f32>), LossError> {
    let (breakdown, ga, gb) = match cfg.loss {
        LossKind::Vicreg => vicreg_loss_grad(za, zb, &cfg.vicreg)?,
        LossKind::Simclr => nt_xent_loss_grad(za, zb, &cfg.ntxent)?,
    };
    let comps = breakdown
        .components
        .iter()
        .map(|(n, v)| ((*n).to_string(), f64::from(*v)))
        .collect();
    Ok((f64::from(breakdown.total), comps, ga, gb))
}

fn abort_non_finite(
    out_dir: Option<&Path>,
    step: usize,
    epoch: usize,
    batch: usize,
    components: Vec<(String, f64)>,
) -> TrainError {
    if let Some(dir) = out_dir {
        let snapshot = serde_json::json!({
            "step": step,
            "epoch": epoch,
            "batch": batch,
            "components": components,
        });
        // Best-effort diagnostic; the abort error itself is what matters.
        let _ = std::fs::write(
            dir.join("abort.json"),
            serde_json::to_string_pretty(&snapshot).expect("snapshot serializes"),
        );
    }
    TrainError::NonFinite {
        step,
        epoch,
        batch,
        components,
    }
}

/// Runs SSL pretraining. With `out_dir` set, writes `metrics.csv`,
/// `checkpoint.bin`, and `summary.json` there; with `None`, trains purely in
/// memory (library/test use).
pub fn train_ssl(
    cfg: &ExperimentConfig,
    data: &[PairedSample],
    out_dir: Option<&Path>,
) -> Result<SslRunResult, TrainError> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let hash = config_hash(cfg);
    let batcher = Batcher::new(
        data.len(),
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

    let enc_spec = cfg.encoder_spec()?;
    let mut model = JointModel::new(enc_spec, cfg.expander_spec(), cfg.shared_weights, cfg.seed);
    let mut adam = Adam::new();
    let mut metrics = match out_dir {
        Some(dir) => Some(MetricsWriter::create(&dir.join("metrics.csv"))?),
        None => None,
    };

    let mode = cfg.pair_mode();
    let mut step = 0usize;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut epoch_checksums = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut pair_rng = indexed_stream(cfg.seed, "augment", epoch as u64);
        for (batch_idx, batch) in batcher.epoch_batches(epoch).into_iter().enumerate() {
            let mut views_a = Vec::with_capacity(batch.len());
            let mut views_b = Vec::with_capacity(batch.len());
            for idx in batch {
                let (va, vb) = make_pair(
                    &data[idx],
                    mode,
                    cfg.symmetric_source,
                    &cfg.augment,
                    &mut pair_rng,
                )?;
                views_a.push(va);
                views_b.push(vb);
            }
            let xa = stack_tiles(&views_a.iter().collect::<Vec<_>>());
            let xb = stack_tiles(&views_b.iter().collect::<Vec<_>>());

            let (za, trace_a) = model.forward_branch_t(Branch::A, &xa);
            let (zb, trace_b) = model.forward_branch_t(Branch::B, &xb);

            let (total, comps, ga, gb) = match loss_and_grads(cfg, &za, &zb) {
                Ok(out) => out,
                Err(LossError::NonFinite { branch, row }) => {
                    return Err(abort_non_finite(
                        out_dir,
                        step,
                        epoch,
                        batch_idx,
                        vec![(format!("embedding_{branch}_row_{row}"), f64::NAN)],
                    ));
                }
                Err(e) => return Err(e.into()),
            };
            if !total.is_finite() || comps.iter().any(|(_, v)| !v.is_finite()) {
                return Err(abort_non_finite(out_dir, step, epoch, batch_idx, comps));
            }

            model.zero_grads();
            model.backward_branch(Branch::A, &trace_a, &ga);
            model.backward_branch(Branch::B, &trace_b, &gb);

            let lr = lr_schedule(step, total_steps, warmup_steps, cfg.lr_max)?;
            adam.begin_step();
            model.visit(&mut |name, param, grad| adam.update(&name, lr, param, grad));

            if let Some(w) = metrics.as_mut() {
                w.write_step(step, lr, total, &comps)?;
            }
            if step == 0 {
                initial_loss = total;
            }
            final_loss = total;
            step += 1;
        }
        let ck_a = to_hex(&model.branch_checksum(Branch::A));
        let ck_b = to_hex(&model.branch_checksum(Branch::B));
        if cfg.shared_weights {
            debug_assert_eq!(ck_a, ck_b, "shared-weights checksum drift at epoch {epoch}");
        }
        epoch_checksums.push((ck_a, ck_b));
    }

    if let Some(w) = metrics.take() {
        w.finish()?;
    }

    let mut summary = RunSummary {
        kind: "ssl".into(),
        config_hash: hash.clone(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        steps: step,
        initial_loss,
        final_loss,
        wall_clock_s: started.elapsed().as_secs_f64(),
        ..RunSummary::default()
    };
    summary.epoch_checksums = epoch_checksums
        .iter()
        .map(|(a, b)| format!("{a}:{b}"))
        .collect();

    let mut checkpoint_path = None;
    if let Some(dir) = out_dir {
        let meta = CheckpointMeta {
            kind: "joint".into(),
            epoch: cfg.epochs as u64,
            global_step: step as u64,
            config_hash: hash,
            encoder_arch: cfg.encoder.to_string(),
            input_px: cfg.input_px,
            embedding_dim: enc_spec.embedding_dim(),
            expander_dim: cfg.expander_dim,
            shared_weights: cfg.shared_weights,
            seed: cfg.seed,
            adam_t: adam.t(),
            rng_cursors: [("augment".to_string(), cfg.epochs as u64)].into(),
            extra: Default::default(),
        };
        let mut arrays = joint_param_arrays(&model);
        arrays.extend(adam.to_arrays());
        let path = dir.join("checkpoint.bin");
        save_container(&path, &meta, &arrays)?;
        summary.save(&dir.join("summary.json"))?;
        checkpoint_path = Some(path);
    }

    Ok(SslRunResult {
        model,
        adam,
        initial_loss,
        final_loss,
        steps: step,
        epoch_checksums,
        checkpoint_path,
        metrics_path: out_dir.map(|d| d.join("metrics.csv")),
        summary,
    })
}
