//! Degradation operations that produce information-sparse views.
//!
//! Each operation is information-non-increasing in a way the tests can check
//! directly: the downsampler's output carries at most `low_px²` distinct
//! values per channel, the crop-padder's output is zero outside the center
//! window, and the mask expansion carries only categorical levels.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::tile::ImageTile;
use super::DataError;

/// Number of categorical mask classes, including background id 0.
pub const MASK_CLASS_COUNT: usize = 6;

/// The family of sparse-view constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    /// Keep a full-resolution center window, zero elsewhere.
    CropPad,
    /// Area-average to a tiny grid, then nearest-neighbor upsample.
    Downsample,
    /// Replace the image with its categorical mask, expanded to 3 channels.
    Mask,
    /// The sparse view is a separate paired image supplied by the manifest.
    ExternalPair,
}

impl std::fmt::Display for Degradation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Degradation::CropPad => "crop_pad",
            Degradation::Downsample => "downsample",
            Degradation::Mask => "mask",
            Degradation::ExternalPair => "external_pair",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Degradation {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crop_pad" => Ok(Degradation::CropPad),
            "downsample" => Ok(Degradation::Downsample),
            "mask" => Ok(Degradation::Mask),
            "external_pair" => Ok(Degradation::ExternalPair),
            other => Err(DataError::BadArg {
                name: "degradation",
                detail: format!(
                    "unknown degradation `{other}` (expected crop_pad, downsample, mask, or external_pair)"
                ),
            }),
        }
    }
}

/// A degradation kind plus its pixel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeSpec {
    pub kind: Degradation,
    /// Side of the retained center window for `crop_pad`.
    pub crop_px: usize,
    /// Side of the low-resolution grid for `downsample`.
    pub low_px: usize,
}

impl DegradeSpec {
    /// Desk-scale defaults: keep a 32 px center window (half of the 64 px
    /// tile) and downsample through a 7×7 grid.
    pub fn desk_default(kind: Degradation) -> Self {
        Self {
            kind,
            crop_px: 32,
            low_px: 7,
        }
    }

    /// Whether this degradation draws the sparse view from a paired file
    /// (mask or alternative modality) rather than computing it from the
    /// dense tile.
    pub fn requires_pair(&self) -> bool {
        matches!(self.kind, Degradation::Mask | Degradation::ExternalPair)
    }

    /// Computes the sparse view from the dense tile for the self-contained
    /// degradations (`crop_pad`, `downsample`). The paired kinds are resolved
    /// by the caller that owns the mask / paired image.
    pub fn sparse_from_dense(&self, dense: &ImageTile) -> Result<ImageTile, DataError> {
        let side = dense.height();
        match self.kind {
            Degradation::CropPad => degrade_crop_pad(dense, self.crop_px, side),
            Degradation::Downsample => degrade_downsample(dense, self.low_px, side),
            Degradation::Mask | Degradation::ExternalPair => Err(DataError::BadArg {
                name: "degradation",
                detail: format!("{} requires a paired input", self.kind),
            }),
        }
    }
}

/// Keeps the `crop_px`×`crop_px` center of `img` and embeds it centered in an
/// `out_px`×`out_px` zero canvas.
pub fn degrade_crop_pad(
    img: &ImageTile,
    crop_px: usize,
    out_px: usize,
) -> Result<ImageTile, DataError> {
    let (h, w) = (img.height(), img.width());
    let side = h.min(w);
    if crop_px == 0 || crop_px > side {
        return Err(DataError::BadArg {
            name: "crop_px",
            detail: format!("crop {crop_px} outside (0, {side}]"),
        });
    }
    if out_px < crop_px {
        return Err(DataError::BadArg {
            name: "out_px",
            detail: format!("output side {out_px} smaller than crop {crop_px}"),
        });
    }
    let src_r = (h - crop_px) / 2;
    let src_c = (w - crop_px) / 2;
    let dst = (out_px - crop_px) / 2;
    let mut out = Array3::zeros((out_px, out_px, 3));
    for r in 0..crop_px {
        for c in 0..crop_px {
            for ch in 0..3 {
                out[[dst + r, dst + c, ch]] = img.pixels()[[src_r + r, src_c + c, ch]];
            }
        }
    }
    Ok(ImageTile::from_clipped(out))
}

/// Per-output-cell overlap weights for an exact (possibly fractional) box
/// average from `in_len` samples down to `out_len` cells.
fn box_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut ws = Vec::new();
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(in_len);
            for r in first..last {
                let overlap = (hi.min((r + 1) as f64) - lo.max(r as f64)).max(0.0);
                if overlap > 0.0 {
                    ws.push((r, overlap));
                }
            }
            ws
        })
        .collect()
}

/// Area-averages `img` onto a `low_px`×`low_px` grid, then nearest-neighbor
/// upsamples back to `out_px`×`out_px`. The output is piecewise-constant on
/// the upsampling grid, so it carries at most `low_px²` distinct values per
/// channel.
pub fn degrade_downsample(
    img: &ImageTile,
    low_px: usize,
    out_px: usize,
) -> Result<ImageTile, DataError> {
    if low_px == 0 {
        return Err(DataError::BadArg {
            name: "low_px",
            detail: "low-resolution side must be positive".into(),
        });
    }
    if low_px > out_px {
        return Err(DataError::BadArg {
            name: "low_px",
            detail: format!("low side {low_px} exceeds output side {out_px}"),
        });
    }
    let (h, w) = (img.height(), img.width());
    let row_w = box_weights(h, low_px);
    let col_w = box_weights(w, low_px);
    let mut low = Array3::<f64>::zeros((low_px, low_px, 3));
    for (i, rws) in row_w.iter().enumerate() {
        for (j, cws) in col_w.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            let mut area = 0.0f64;
            for &(r, wr) in rws {
                for &(c, wc) in cws {
                    let wgt = wr * wc;
                    for (ch, a) in acc.iter_mut().enumerate() {
                        *a += wgt * f64::from(img.pixels()[[r, c, ch]]);
                    }
                    area += wgt;
                }
            }
            for ch in 0..3 {
                low[[i, j, ch]] = acc[ch] / area;
            }
        }
    }
    let mut out = Array3::zeros((out_px, out_px, 3));
    for r in 0..out_px {
        let lr = r * low_px / out_px;
        for c in 0..out_px {
            let lc = c * low_px / out_px;
            for ch in 0..3 {
                out[[r, c, ch]] = (low[[lr, lc, ch]] as f32).clamp(0.0, 1.0);
            }
        }
    }
    Ok(ImageTile::from_clipped(out))
}

/// Expands a categorical mask into a 3-channel tile: every channel equals the
/// mask with class id `k` mapped to `k/(classes−1)`.
pub fn mask_to_3channel(mask: &Array2<u8>, classes: usize) -> Result<ImageTile, DataError> {
    if classes < 2 {
        return Err(DataError::BadArg {
            name: "classes",
            detail: format!("need at least 2 mask classes, got {classes}"),
        });
    }
    let denom = (classes - 1) as f32;
    let (h, w) = mask.dim();
    let mut out = Array3::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            let id = mask[[r, c]];
            if usize::from(id) >= classes {
                return Err(DataError::Range {
                    detail: format!("mask id {id} at ({r},{c}) outside 0..{classes}"),
                });
            }
            let v = f32::from(id) / denom;
            for ch in 0..3 {
                out[[r, c, ch]] = v;
            }
        }
    }
    Ok(ImageTile::from_clipped(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;
    use rand::Rng;

    fn random_tile(h: usize, w: usize, tag: &str) -> ImageTile {
        let mut rng = stream(99, tag);
        let px = Array3::from_shape_fn((h, w, 3), |_| rng.gen::<f32>());
        ImageTile::new(px).unwrap()
    }

    #[test]
    fn crop_pad_center_window_and_zero_ring() {
        let img = random_tile(224, 224, "cp");
        let out = degrade_crop_pad(&img, 112, 224).unwrap();
        let off = (224 - 112) / 2;
        for r in 0..224 {
            for c in 0..224 {
                let inside =
                    (off..off + 112).contains(&r) && (off..off + 112).contains(&c);
                for ch in 0..3 {
                    let got = out.pixels()[[r, c, ch]];
                    if inside {
                        assert_eq!(got, img.pixels()[[r, c, ch]]);
                    } else {
                        assert_eq!(got, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn crop_pad_identity_when_crop_equals_side() {
        let img = random_tile(16, 16, "cpi");
        let out = degrade_crop_pad(&img, 16, 16).unwrap();
        assert_eq!(img.pixels(), out.pixels());
    }

    #[test]
    fn crop_pad_ones_count_oracle() {
        let img = ImageTile::constant(8, 8, 1.0).unwrap();
        let out = degrade_crop_pad(&img, 4, 8).unwrap();
        for ch in 0..3 {
            let plane = out.pixels().index_axis(ndarray::Axis(2), ch);
            let ones = plane.iter().filter(|&&v| v == 1.0).count();
            let zeros = plane.iter().filter(|&&v| v == 0.0).count();
            assert_eq!(ones, 16);
            assert_eq!(zeros, 48);
        }
    }

    #[test]
    fn crop_pad_rejects_oversized_crop() {
        let img = ImageTile::constant(8, 8, 0.5).unwrap();
        assert!(matches!(
            degrade_crop_pad(&img, 9, 8),
            Err(DataError::BadArg { name: "crop_px", .. })
        ));
        assert!(matches!(
            degrade_crop_pad(&img, 4, 2),
            Err(DataError::BadArg { name: "out_px", .. })
        ));
    }

    #[test]
    fn downsample_identity_when_low_equals_out() {
        let img = random_tile(12, 12, "dsi");
        let out = degrade_downsample(&img, 12, 12).unwrap();
        for (a, b) in img.pixels().iter().zip(out.pixels().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_constant_tile_unchanged() {
        let img = ImageTile::constant(64, 64, 0.37).unwrap();
        let out = degrade_downsample(&img, 7, 64).unwrap();
        for &v in out.pixels().iter() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_distinct_value_budget() {
        let img = random_tile(224, 224, "dsd");
        let out = degrade_downsample(&img, 7, 224).unwrap();
        for count in out.distinct_values_per_channel() {
            assert!(count <= 49, "distinct values {count} > 49");
        }
        assert_eq!(out.height(), 224);
        assert_eq!(out.width(), 224);
    }

    #[test]
    fn downsample_preserves_mean_exactly() {
        // Every low-res cell covers the same area, so the grand mean of the
        // area-averaged grid must match the input mean.
        let img = random_tile(9, 9, "dsm");
        let out = degrade_downsample(&img, 4, 4).unwrap();
        // out is the low grid itself when out_px == low_px (nearest identity)
        let mean_in: f32 = img.pixels().iter().sum::<f32>() / (9.0 * 9.0 * 3.0);
        let mean_low: f32 = out.pixels().iter().sum::<f32>() / (4.0 * 4.0 * 3.0);
        assert!((mean_in - mean_low).abs() < 1e-5, "{mean_in} vs {mean_low}");
    }

    #[test]
    fn downsample_fractional_hand_fixture() {
        // Columns ramp 0, 0.25, 0.5, 0.75, 1.0; rows constant. 5 → 2 cells:
        // cell 0 covers cols [0, 2.5): (1·0 + 1·0.25 + 0.5·0.5)/2.5 = 0.2
        // cell 1 covers cols [2.5, 5): (0.5·0.5 + 1·0.75 + 1·1.0)/2.5 = 0.8
        // Nearest upsample 2 → 5 maps rows/cols {0,1,2} → 0 and {3,4} → 1.
        let px = Array3::from_shape_fn((5, 5, 3), |(_, c, _)| c as f32 * 0.25);
        let img = ImageTile::new(px).unwrap();
        let out = degrade_downsample(&img, 2, 5).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let expect = if c < 3 { 0.2 } else { 0.8 };
                assert!(
                    (out.pixels()[[r, c, 0]] - expect).abs() < 1e-6,
                    "({r},{c}) = {}",
                    out.pixels()[[r, c, 0]]
                );
            }
        }
    }

    #[test]
    fn mask_expansion_all_background_is_zero() {
        let mask = Array2::<u8>::zeros((6, 6));
        let out = mask_to_3channel(&mask, MASK_CLASS_COUNT).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_expansion_constant_class_scaling() {
        let mask = Array2::<u8>::from_elem((4, 4), 3);
        let out = mask_to_3channel(&mask, MASK_CLASS_COUNT).unwrap();
        for &v in out.pixels().iter() {
            assert!((v - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_expansion_mixed_fixture_and_identical_channels() {
        let mask = array![[0u8, 1], [5, 2]];
        let out = mask_to_3channel(&mask, MASK_CLASS_COUNT).unwrap();
        let expect = [[0.0f32, 0.2], [1.0, 0.4]];
        for r in 0..2 {
            for c in 0..2 {
                for ch in 0..3 {
                    assert_eq!(out.pixels()[[r, c, ch]], expect[r][c]);
                }
            }
        }
        let p = out.pixels();
        for r in 0..2 {
            for c in 0..2 {
                assert!(p[[r, c, 0]].to_bits() == p[[r, c, 1]].to_bits());
                assert!(p[[r, c, 0]].to_bits() == p[[r, c, 2]].to_bits());
            }
        }
    }

    #[test]
    fn mask_expansion_rejects_out_of_range_id() {
        let mask = Array2::<u8>::from_elem((2, 2), 6);
        assert!(matches!(
            mask_to_3channel(&mask, MASK_CLASS_COUNT),
            Err(DataError::Range { .. })
        ));
    }

    #[test]
    fn spec_desk_defaults_and_dispatch() {
        let spec = DegradeSpec::desk_default(Degradation::Downsample);
        assert_eq!((spec.crop_px, spec.low_px), (32, 7));
        assert!(!spec.requires_pair());
        assert!(DegradeSpec::desk_default(Degradation::Mask).requires_pair());
        let img = random_tile(64, 64, "spec");
        let sparse = spec.sparse_from_dense(&img).unwrap();
        assert!(sparse.distinct_values_per_channel()[0] <= 49);
        let err = DegradeSpec::desk_default(Degradation::Mask).sparse_from_dense(&img);
        assert!(err.is_err());
    }

    #[test]
    fn degradation_parses_and_displays() {
        for (s, d) in [
            ("crop_pad", Degradation::CropPad),
            ("downsample", Degradation::Downsample),
            ("mask", Degradation::Mask),
            ("external_pair", Degradation::ExternalPair),
        ] {
            assert_eq!(s.parse::<Degradation>().unwrap(), d);
            assert_eq!(d.to_string(), s);
        }
        assert!("blur".parse::<Degradation>().is_err());
    }
}
