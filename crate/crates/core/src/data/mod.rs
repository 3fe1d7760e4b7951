//! Dataset ingestion, view-pair construction, augmentation, and the
//! procedural desk-scale dataset generator.
//!
//! The pipeline moves `ImageTile`s (H×W×3, values in `[0,1]`) through three
//! stages:
//!
//! 1. **Degradation** — produce an information-sparse view from a dense tile
//!    (center-crop-and-pad, heavy downsampling, or a categorical mask).
//! 2. **Pairing** — assemble the two training views, either two augmented
//!    copies of the same tile (symmetric) or one sparse + one dense view
//!    (asymmetric).
//! 3. **Batching** — deterministic, seed-driven subsampling and shuffling.
//!
//! All randomness flows from explicit seeds; two runs with equal seeds see
//! identical batch streams.

pub mod augment;
pub mod batch;
pub mod degrade;
pub mod manifest;
pub mod pair;
pub mod synth;
pub mod tile;

pub use augment::{augment, AugmentationPolicy};
pub use batch::Batcher;
pub use degrade::{
    degrade_crop_pad, degrade_downsample, mask_to_3channel, DegradeSpec, Degradation,
    MASK_CLASS_COUNT,
};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestRecord, Split};
pub use pair::{make_pair, PairMode, ViewKind};
pub use synth::{synth_dataset, synth_sample, write_synth_dataset};
pub use tile::{stack_tiles, ImageTile};

use std::path::PathBuf;

/// One training sample: the dense tile, its information-sparse counterpart,
/// and the task labels.
#[derive(Debug, Clone)]
pub struct PairedSample {
    /// Full-information view (the degradation input / regression target side).
    pub dense: tile::ImageTile,
    /// Information-sparse view (degraded or alternative-modality input).
    pub sparse: tile::ImageTile,
    /// Tissue-level class id (primary task).
    pub tissue_label: usize,
    /// Cell-level class id (secondary task), when the source provides one.
    pub cell_label: Option<usize>,
    /// Identity of the originating source (e.g. donor); train/test splits
    /// must not share source ids.
    pub source_id: String,
}

/// Errors produced by the data pipeline.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    /// An argument violated a documented precondition.
    #[error("invalid argument `{name}`: {detail}")]
    BadArg { name: &'static str, detail: String },
    /// A tile or mask had the wrong shape.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    /// Pixel values fell outside `[0,1]` or were non-finite.
    #[error("pixel range violation: {detail}")]
    Range { detail: String },
    /// Reading or writing an image file failed.
    #[error("image i/o failed for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    /// Filesystem i/o failed.
    #[error("i/o failed for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The manifest file could not be read or parsed at all.
    #[error("manifest load failed for {path}: {detail}")]
    ManifestLoad { path: PathBuf, detail: String },
    /// One manifest record is invalid. `row` is the 1-based data-row index
    /// (excluding the header line).
    #[error("manifest row {row}: {detail}")]
    ManifestRow { row: usize, detail: String },
    /// The same source id appears in both the train and the test split.
    #[error("source `{source_id}` appears in both train and test splits")]
    SplitOverlap { source_id: String },
    /// Batch configuration is unsatisfiable.
    #[error("batch configuration error: {detail}")]
    BatchConfig { detail: String },
}
