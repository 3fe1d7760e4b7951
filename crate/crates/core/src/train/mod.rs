//! Training: SSL pretraining over the two-branch model, linear probes on
//! frozen encoders, supervised baselines, and cross-task transfer — all on
//! the warmup-cosine Adam schedule.

pub mod config;
pub mod metrics;
pub mod optim;
pub mod probe;
pub mod schedule;
pub mod ssl;
pub mod supervised;

pub use config::{
    config_hash, ExperimentConfig, LossKind, ProbeConfig, SupervisedConfig, TaskKind,
};
pub use metrics::{accuracy_from_confusion, confusion_matrix, EvalReport, MetricsWriter, RunSummary};
pub use optim::Adam;
pub use probe::{embed_samples, fit_probe, train_probe, transfer_eval, ProbeResult};
pub use schedule::lr_schedule;
pub use ssl::{train_ssl, SslRunResult};
pub use supervised::{train_supervised, SupervisedModel, SupervisedResult};

use crate::data::DataError;
use crate::loss::LossError;
use crate::model::ModelError;

/// Lowercase hex of a byte string (used for checksums in summaries).
pub(crate) fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Errors raised by training entry points.
#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    /// A config field or argument violates its documented range.
    #[error("configuration error: {detail}")]
    BadConfig { detail: String },
    /// The loss became non-finite; training aborts with a diagnostic
    /// snapshot rather than skipping the batch.
    #[error("non-finite loss at step {step} (epoch {epoch}, batch {batch}): {components:?}")]
    NonFinite {
        step: usize,
        epoch: usize,
        batch: usize,
        components: Vec<(String, f64)>,
    },
    /// The requested task has no labels in the dataset.
    #[error("dataset provides no `{task}` labels")]
    MissingLabels { task: String },
    /// An evaluation split contained no samples.
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("i/o failed for {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
