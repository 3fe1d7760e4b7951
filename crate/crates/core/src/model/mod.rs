//! Encoders, expanders, the joint two-branch model, probes, checkpoints.

pub mod checkpoint;
pub mod encoder;
pub mod expander;
pub mod joint;
pub mod layers;
pub mod probe;

pub use checkpoint::{ArrayEntry, CheckpointMeta};
pub use encoder::{EncoderArch, EncoderNet, EncoderSpec, EncoderTrace};
pub use expander::{ExpanderSpec, Mlp};
pub use joint::{Branch, JointModel, JointTrace};
pub use probe::LinearProbe;

use thiserror::Error;

/// Errors raised by model construction and checkpoint IO.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input of {got}px is too small for {arch} (minimum {min}px)")]
    InputTooSmall { arch: String, got: usize, min: usize },
    #[error("unknown encoder architecture '{name}'")]
    UnknownArch { name: String },
    #[error("unknown analysis tap '{name}'; available taps: {available:?}")]
    UnknownTap {
        name: String,
        available: Vec<String>,
    },
    #[error("checkpoint IO failed for {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path} is corrupt: {detail}")]
    Corrupt { path: String, detail: String },
    #[error("parameter '{layer}' has {got} values in the checkpoint but the model expects {expected}")]
    ShapeMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error("checkpoint is missing parameter '{layer}'")]
    MissingArray { layer: String },
}
