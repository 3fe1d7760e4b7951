//! RGB image tiles: the unit of data flowing through the pipeline.

use std::path::Path;

use ndarray::{Array2, Array3, Array4};

use super::DataError;

/// An H×W×3 image with values in `[0,1]`.
///
/// Channel order is RGB and the memory layout is height × width × channel.
/// Single-channel sources (e.g. categorical masks) must be expanded to three
/// identical channels before entering the pipeline — see
/// [`mask_to_3channel`](super::degrade::mask_to_3channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTile {
    pixels: Array3<f32>,
}

impl ImageTile {
    /// Wraps an H×W×3 array, validating shape and value range.
    pub fn new(pixels: Array3<f32>) -> Result<Self, DataError> {
        let (_, _, c) = pixels.dim();
        if c != 3 {
            return Err(DataError::Shape {
                expected: "H x W x 3".into(),
                got: format!("{:?}", pixels.dim()),
            });
        }
        for &v in pixels.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DataError::Range {
                    detail: format!("value {v} outside [0,1]"),
                });
            }
        }
        Ok(Self { pixels })
    }

    /// Wraps an array that is already known to be clipped to `[0,1]`.
    ///
    /// Internal constructor for operations that clip as a final step.
    pub(crate) fn from_clipped(pixels: Array3<f32>) -> Self {
        debug_assert_eq!(pixels.dim().2, 3);
        debug_assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { pixels }
    }

    /// A solid-color tile.
    pub fn constant(h: usize, w: usize, value: f32) -> Result<Self, DataError> {
        Self::new(Array3::from_elem((h, w, 3), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// Read-only pixel array (H×W×3).
    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    /// Consumes the tile, returning the raw array.
    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    /// Number of distinct quantized values per channel, useful for checking
    /// information-non-increase of degradations. Values are bucketed at 1e-6
    /// resolution so float noise does not inflate the count.
    pub fn distinct_values_per_channel(&self) -> [usize; 3] {
        let mut out = [0usize; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut vals: Vec<i64> = self
                .pixels
                .index_axis(ndarray::Axis(2), c)
                .iter()
                .map(|&v| (v as f64 * 1e6).round() as i64)
                .collect();
            vals.sort_unstable();
            vals.dedup();
            *slot = vals.len();
        }
        out
    }

    /// Writes the tile as an 8-bit RGB PNG (values scaled by 255 and rounded).
    pub fn save_png(&self, path: &Path) -> Result<(), DataError> {
        let (h, w, _) = self.pixels.dim();
        let mut buf = Vec::with_capacity(h * w * 3);
        for row in 0..h {
            for col in 0..w {
                for c in 0..3 {
                    buf.push((self.pixels[[row, col, c]] * 255.0).round() as u8);
                }
            }
        }
        let img = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("sized buffer");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| DataError::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Loads an 8-bit RGB PNG, mapping values to `[0,1]` via division by 255.
    pub fn load_png(path: &Path) -> Result<Self, DataError> {
        let img = image::open(path)
            .map_err(|source| DataError::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let mut pixels = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[[y as usize, x as usize, c]] = f32::from(p.0[c]) / 255.0;
            }
        }
        Ok(Self { pixels })
    }
}

/// Writes a categorical mask as an 8-bit grayscale PNG holding raw class ids.
pub fn save_mask_png(mask: &Array2<u8>, path: &Path) -> Result<(), DataError> {
    let (h, w) = mask.dim();
    let mut buf = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            buf.push(mask[[row, col]]);
        }
    }
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf).expect("sized buffer");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| DataError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads a categorical mask written by [`save_mask_png`].
pub fn load_mask_png(path: &Path) -> Result<Array2<u8>, DataError> {
    let img = image::open(path)
        .map_err(|source| DataError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let mut mask = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        mask[[y as usize, x as usize]] = p.0[0];
    }
    Ok(mask)
}

/// Stacks tiles into a batch laid out as (N, 3, H, W) for the encoders.
///
/// Panics if the tiles disagree on spatial dimensions (caller bug).
pub fn stack_tiles(tiles: &[&ImageTile]) -> Array4<f32> {
    assert!(!tiles.is_empty(), "cannot stack an empty tile list");
    let h = tiles[0].height();
    let w = tiles[0].width();
    let mut out = Array4::zeros((tiles.len(), 3, h, w));
    for (n, tile) in tiles.iter().enumerate() {
        assert_eq!(
            (tile.height(), tile.width()),
            (h, w),
            "tile {n} has mismatched dimensions"
        );
        for row in 0..h {
            for col in 0..w {
                for c in 0..3 {
                    out[[n, c, row, col]] = tile.pixels()[[row, col, c]];
                }
            }
        }
    }
    out
}
