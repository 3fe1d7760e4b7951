//! Representation analysis: layer activation extraction, linear CKA between
//! models, GradCAM saliency heatmaps, and report generation.
//!
//! Everything here is pure given loaded models and fixed probe sets, so all
//! outputs are byte-deterministic and safe to parallelize across model
//! pairs.

pub mod activations;
pub mod cka;
pub mod gradcam;
pub mod report;

pub use activations::{extract_activations, ActivationSet};
pub use cka::{average_cka, cka_layer_matrix, linear_cka, CkaMatrix};
pub use gradcam::{gradcam, heatmap_mass_in_region, GradCamTarget, Heatmap};
pub use report::{
    collect_runs, render_cka_image, render_overlay_image, render_report, save_image,
    EvalArtifact, RunEntry,
};

use std::path::PathBuf;

/// Errors raised by analysis operations.
#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    /// A requested layer is not a tap of the encoder architecture.
    #[error("unknown layer `{layer}`; available taps: {available:?}")]
    UnknownLayer {
        layer: String,
        available: Vec<String>,
    },
    /// Activation matrices that must be compared row-by-row disagree on N.
    #[error("row-count mismatch: {detail}")]
    RowMismatch { detail: String },
    /// CKA needs at least 3 samples.
    #[error("CKA needs at least 3 rows, got {n}")]
    TooFewRows { n: usize },
    /// An input had no variance left after centering (all rows identical).
    #[error("degenerate CKA input: {detail}")]
    Degenerate { detail: String },
    /// A class-logit GradCAM target was requested without a probe head.
    #[error("target `{target}` requires a probe head")]
    MissingProbe { target: String },
    /// The class id exceeds the probe's class count.
    #[error("class {class} out of range for a {n_classes}-class probe")]
    BadClass { class: usize, n_classes: usize },
    /// Probe head width disagrees with the encoder embedding width.
    #[error("probe expects {probe_dim}-d embeddings, encoder produces {enc_dim}-d")]
    DimMismatch { probe_dim: usize, enc_dim: usize },
    /// An operation got an empty sample set.
    #[error("empty probe set")]
    EmptyProbeSet,
    /// Matrices being averaged have different axes.
    #[error("matrix axes disagree: {detail}")]
    AxisMismatch { detail: String },
    #[error("i/o failed for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image encoding failed for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("malformed artifact {path}: {detail}")]
    BadArtifact { path: PathBuf, detail: String },
}
