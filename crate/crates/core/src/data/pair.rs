//! Assembly of the two training views from a paired sample.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentationPolicy};
use super::tile::ImageTile;
use super::{DataError, PairedSample};

/// Whether the two branches see the same input or different ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Both views are independently augmented copies of one input.
    Symmetric,
    /// View A is the sparse input, view B the dense input.
    Asymmetric,
}

impl std::fmt::Display for PairMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairMode::Symmetric => "symmetric",
            PairMode::Asymmetric => "asymmetric",
        })
    }
}

/// Which stored view feeds both branches of a symmetric pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    /// The degraded view — the usual choice when benchmarking sparse-input
    /// baselines.
    Sparse,
    /// The full-information view — used for dense-input reference runs.
    Dense,
}

impl std::fmt::Display for ViewKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViewKind::Sparse => "sparse",
            ViewKind::Dense => "dense",
        })
    }
}

impl std::str::FromStr for ViewKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" => Ok(ViewKind::Sparse),
            "dense" => Ok(ViewKind::Dense),
            other => Err(DataError::BadArg {
                name: "view",
                detail: format!("unknown view `{other}` (expected sparse or dense)"),
            }),
        }
    }
}

/// Builds the (view A, view B) training pair for one sample.
///
/// Symmetric mode augments the `symmetric_source` view twice with
/// independent randomness. Asymmetric mode puts the augmented sparse view on
/// branch A and the augmented dense view on branch B. The two views consume
/// child streams forked from `rng`, so their randomness is independent but
/// fully seed-determined.
pub fn make_pair(
    sample: &PairedSample,
    mode: PairMode,
    symmetric_source: ViewKind,
    policy: &AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageTile, ImageTile), DataError> {
    let mut rng_a = ChaCha8Rng::seed_from_u64(rng.gen::<u64>());
    let mut rng_b = ChaCha8Rng::seed_from_u64(rng.gen::<u64>());
    let (src_a, src_b) = match mode {
        PairMode::Symmetric => {
            let src = match symmetric_source {
                ViewKind::Sparse => &sample.sparse,
                ViewKind::Dense => &sample.dense,
            };
            (src, src)
        }
        PairMode::Asymmetric => (&sample.sparse, &sample.dense),
    };
    let view_a = augment(src_a, policy, &mut rng_a)?;
    let view_b = augment(src_b, policy, &mut rng_b)?;
    Ok((view_a, view_b))
}
