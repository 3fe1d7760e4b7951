//! Procedural desk-scale dataset with controllable information density.
//!
//! Every sample is a soft-edged "blob field" over a striped background. The
//! 4-way tissue class is encoded twice, at two spatial scales:
//!
//! * **Coarse cue** (class bit 0): blob polarity — blobs are darker or
//!   brighter than the background. Blob/background mean contrast survives
//!   heavy downsampling, mirror flips, and right-angle rotations.
//! * **Fine cue** (class bit 1): background stripe period (4 px vs 2 px).
//!   Stripes average away under a 7×7 area downsample, so the sparse view
//!   loses this bit almost entirely. A deliberately weak trace remains: the
//!   blob contrast *magnitude* co-varies with the fine bit (0.12 vs 0.17),
//!   but contrast jitter in the augmentation policy corrupts that magnitude,
//!   so invariance-driven training is pushed to discard it while
//!   dense-target regression is rewarded for keeping it.
//!
//! The cell-level task is independent of the tissue class: each blob carries
//! one of five cell classes, rendered as a weak color tint and recorded in a
//! categorical mask; `cell_label` is the majority blob class. Because blob
//! placement and classes are drawn independently of the tissue bits, masks
//! carry **no** tissue information — probing tissue labels from mask views
//! is chance-level by construction.
//!
//! All pixel values stay below 0.5 (before additive noise), so threshold-0.5
//! solarization in the default augmentation policy does not alias the
//! polarity cue.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::degrade::{mask_to_3channel, DegradeSpec, Degradation, MASK_CLASS_COUNT};
use super::manifest::{save_manifest, ManifestRecord, Split};
use super::tile::{save_mask_png, ImageTile};
use super::{DataError, PairedSample};
use crate::rng::indexed_stream;

/// Number of tissue classes the generator produces.
pub const TISSUE_CLASS_COUNT: usize = 4;

/// Background gray level (before the per-image offset). Low enough that
/// even bright-polarity blob cores (+0.17 contrast, +0.028 tint) stay
/// below the 0.5 solarization threshold.
const BG_LEVEL: f32 = 0.25;
/// Per-image uniform background offset half-width.
const BG_JITTER: f32 = 0.02;
/// Blob contrast magnitude (identical for both fine-bit values, so blob
/// brightness carries the coarse cue only and no magnitude statistic leaks
/// the fine bit into globally pooled features).
const CONTRAST: f32 = 0.15;
/// Background stripe period in pixels per fine-bit value (at the 64 px
/// reference scale): the fine cue is the carrier *frequency*. Both periods
/// sit far above the block Nyquist limit of a 7×7 area downsample, so the
/// carriers themselves lose >95% of their power in the sparse view. They
/// are chosen against the ~9.14 px averaging window W = 64/7:
///
/// * fine bit 0 → W/1.5: exactly 1.5 periods per block. The half-period
///   beat survives averaging as an alternating band pattern of amplitude
///   sinc(1.5π)·amp ≈ 0.21·amp — the only sparse-side witness of the bit.
/// * fine bit 1 → W/2.0: exactly 2 periods per block, so the average
///   cancels and the sparse view is band-free.
///
/// Equal carrier amplitudes mean no global magnitude statistic separates
/// the classes; the witness is purely spatial (band presence), which takes
/// band-pass detectors to read.
const STRIPE_PERIOD: [f32; 2] = [64.0 / 7.0 / 1.5, 64.0 / 7.0 / 2.0];
/// Carrier phase. Fixed (not drawn per image) so the beat pattern samples
/// the carrier at its extrema: with this phase the centers of the ~9.1 px
/// averaging blocks land on sin = ±1, maximizing the surviving bands.
const STRIPE_PHASE: f32 = std::f32::consts::PI;
/// Carrier amplitude, identical for both fine-bit values (applied outside
/// blobs only).
const STRIPE_AMP: f32 = 0.12;
/// Magnitude of the per-class blob color tint. Large enough that the
/// dominant hue excess is learnable from dense views, yet bright-blob
/// pixels (bg + contrast + tint·0.8165) stay below the 0.5 solarization
/// threshold.
const TINT_MAG: f32 = 0.10;
/// Probability that a blob takes the image's dominant cell class instead
/// of a uniform draw. Keeps the majority vote decisive, so `cell_label` is
/// a low-noise target.
const DOMINANT_BLOB_PROB: f64 = 0.5;
/// Generation-time additive pixel noise.
const GEN_NOISE_SIGMA: f32 = 0.008;

/// Unit-ish color directions for the five cell classes (zero-sum per
/// direction so tints shift hue, not luminance).
const TINTS: [[f32; 3]; 5] = [
    [0.7071, -0.7071, 0.0],
    [0.0, 0.7071, -0.7071],
    [-0.7071, 0.0, 0.7071],
    [0.4082, 0.4082, -0.8165],
    [-0.8165, 0.4082, 0.4082],
];

struct Blob {
    cy: f32,
    cx: f32,
    r: f32,
    class: u8,
}

/// A generated dense tile plus its categorical mask and majority cell class.
struct RawSample {
    dense: ImageTile,
    mask: Array2<u8>,
    cell_label: usize,
}

fn gen_raw(rng: &mut ChaCha8Rng, tissue_class: usize, img_px: usize) -> RawSample {
    let polarity = tissue_class & 1;
    let fine = (tissue_class >> 1) & 1;
    let s = img_px as f32;
    let scale = s / 64.0;

    let bg = BG_LEVEL + rng.gen_range(-BG_JITTER..=BG_JITTER);
    let contrast = CONTRAST;
    let sign = if polarity == 0 { -1.0f32 } else { 1.0 };
    let period = STRIPE_PERIOD[fine] * scale;
    let stripe_amp = STRIPE_AMP;
    let phase = STRIPE_PHASE;

    let n_blobs = rng.gen_range(10..=14);
    // One cell class dominates each image (drawn independently of the
    // tissue class), so the majority label rests on a clear hue excess.
    let dominant = rng.gen_range(1..MASK_CLASS_COUNT as u8);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| {
            let r = rng.gen_range(5.0 * scale..=10.0 * scale);
            let uniform = rng.gen_range(1..MASK_CLASS_COUNT as u8);
            Blob {
                cy: rng.gen_range(r..s - r),
                cx: rng.gen_range(r..s - r),
                r,
                class: if rng.gen_bool(DOMINANT_BLOB_PROB) {
                    dominant
                } else {
                    uniform
                },
            }
        })
        .collect();

    let noise = Normal::new(0.0f32, GEN_NOISE_SIGMA).expect("const sigma");
    let mut pixels = Array3::zeros((img_px, img_px, 3));
    let mut mask = Array2::zeros((img_px, img_px));
    let mut class_counts = [0usize; MASK_CLASS_COUNT];
    for row in 0..img_px {
        for col in 0..img_px {
            // Soft coverage by the nearest-dominating blob.
            let mut cover = 0.0f32;
            let mut owner = 0usize;
            for (b, blob) in blobs.iter().enumerate() {
                let d = ((row as f32 - blob.cy).powi(2) + (col as f32 - blob.cx).powi(2)).sqrt();
                let c = ((blob.r - d) / 1.5 + 0.5).clamp(0.0, 1.0);
                if c > cover {
                    cover = c;
                    owner = b;
                }
            }
            let stripe = stripe_amp
                * (std::f32::consts::TAU * col as f32 / period + phase).sin()
                * (1.0 - cover);
            let lum = bg + sign * contrast * cover + stripe;
            let tint = if cover > 0.0 {
                TINTS[usize::from(blobs[owner].class) - 1]
            } else {
                [0.0; 3]
            };
            for ch in 0..3 {
                let v = lum + TINT_MAG * tint[ch] * cover + noise.sample(rng);
                pixels[[row, col, ch]] = v.clamp(0.0, 1.0);
            }
            if cover >= 0.5 {
                let id = blobs[owner].class;
                mask[[row, col]] = id;
                class_counts[usize::from(id)] += 1;
            }
        }
    }

    let cell_label = class_counts
        .iter()
        .enumerate()
        .skip(1)
        .max_by_key(|&(_, n)| *n)
        .map(|(id, _)| id)
        .unwrap_or(usize::from(blobs[0].class));

    RawSample {
        dense: ImageTile::from_clipped(pixels),
        mask,
        cell_label,
    }
}

/// Renders the synthetic stand-in for an alternative information-dense
/// modality (e.g. a restain): blob regions in saturated per-class colors on
/// a black background.
fn render_restain(mask: &Array2<u8>) -> ImageTile {
    const COLORS: [[f32; 3]; 5] = [
        [0.9, 0.1, 0.1],
        [0.1, 0.9, 0.1],
        [0.1, 0.1, 0.9],
        [0.9, 0.9, 0.1],
        [0.9, 0.1, 0.9],
    ];
    let (h, w) = mask.dim();
    let mut px = Array3::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            let id = usize::from(mask[[r, c]]);
            if id > 0 {
                for ch in 0..3 {
                    px[[r, c, ch]] = COLORS[id - 1][ch];
                }
            }
        }
    }
    ImageTile::from_clipped(px)
}

fn validate_args(tissue_class: usize, img_px: usize) -> Result<(), DataError> {
    if tissue_class >= TISSUE_CLASS_COUNT {
        return Err(DataError::BadArg {
            name: "tissue_class",
            detail: format!("class {tissue_class} outside 0..{TISSUE_CLASS_COUNT}"),
        });
    }
    if img_px < 32 {
        return Err(DataError::BadArg {
            name: "img_px",
            detail: format!("tile side {img_px} below the 32 px minimum"),
        });
    }
    Ok(())
}

/// Generates one sample plus its categorical mask (needed by mask-space
/// analyses such as heatmap-mass scoring).
pub fn synth_sample_with_mask(
    rng: &mut ChaCha8Rng,
    tissue_class: usize,
    img_px: usize,
    degrade: &DegradeSpec,
) -> Result<(PairedSample, Array2<u8>), DataError> {
    validate_args(tissue_class, img_px)?;
    let raw = gen_raw(rng, tissue_class, img_px);
    let sparse = match degrade.kind {
        Degradation::CropPad | Degradation::Downsample => degrade.sparse_from_dense(&raw.dense)?,
        Degradation::Mask => mask_to_3channel(&raw.mask, MASK_CLASS_COUNT)?,
        Degradation::ExternalPair => render_restain(&raw.mask),
    };
    let source_id = format!("synth{:016x}", rng.gen::<u64>());
    let sample = PairedSample {
        dense: raw.dense,
        sparse,
        tissue_label: tissue_class,
        cell_label: Some(raw.cell_label),
        source_id,
    };
    Ok((sample, raw.mask))
}

/// Generates one procedural sample whose sparse view uses the requested
/// degradation. Deterministic given the rng state.
pub fn synth_sample(
    rng: &mut ChaCha8Rng,
    tissue_class: usize,
    img_px: usize,
    degrade: &DegradeSpec,
) -> Result<PairedSample, DataError> {
    synth_sample_with_mask(rng, tissue_class, img_px, degrade).map(|(s, _)| s)
}

/// Generates a class-balanced dataset of `n` samples (classes assigned
/// round-robin) from one seed. Sample `i` draws from an index-derived
/// stream, so any prefix of the dataset is stable under changes to `n`.
pub fn synth_dataset(
    seed: u64,
    n: usize,
    img_px: usize,
    degrade: &DegradeSpec,
) -> Result<Vec<PairedSample>, DataError> {
    (0..n)
        .map(|i| {
            let mut rng = indexed_stream(seed, "synth", i as u64);
            synth_sample(&mut rng, i % TISSUE_CLASS_COUNT, img_px, degrade)
        })
        .collect()
}

/// Writes a synthetic dataset to disk in the manifest + PNG layout:
/// `images/srcNNNNN_img.png`, `masks/srcNNNNN_mask.png`, and
/// `manifest.csv` with train rows first, then test rows. Returns the
/// manifest path. The sparse view is not stored; loaders reconstruct it
/// from the dense tile or the mask according to their degradation config.
pub fn write_synth_dataset(
    root: &Path,
    seed: u64,
    n_train: usize,
    n_test: usize,
    img_px: usize,
) -> Result<PathBuf, DataError> {
    let images = root.join("images");
    let masks = root.join("masks");
    for dir in [&images, &masks] {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let mut records = Vec::with_capacity(n_train + n_test);
    for i in 0..n_train + n_test {
        let mut rng = indexed_stream(seed, "synth", i as u64);
        let class = i % TISSUE_CLASS_COUNT;
        let raw = gen_raw(&mut rng, class, img_px);
        let sid = format!("src{i:05}");
        let img_path = images.join(format!("{sid}_img.png"));
        let mask_path = masks.join(format!("{sid}_mask.png"));
        raw.dense.save_png(&img_path)?;
        save_mask_png(&raw.mask, &mask_path)?;
        records.push(ManifestRecord {
            image_path: PathBuf::from(format!("images/{sid}_img.png")),
            tissue_label: class.to_string(),
            cell_label: Some(raw.cell_label.to_string()),
            pair_path: Some(PathBuf::from(format!("masks/{sid}_mask.png"))),
            split: if i < n_train { Split::Train } else { Split::Test },
        });
    }
    let manifest_path = root.join("manifest.csv");
    save_manifest(&manifest_path, &records)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn spec() -> DegradeSpec {
        DegradeSpec::desk_default(Degradation::Downsample)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_sample(&mut stream(5, "s"), 0, 64, &spec()).unwrap();
        let b = synth_sample(&mut stream(5, "s"), 0, 64, &spec()).unwrap();
        assert_eq!(a.dense.pixels(), b.dense.pixels());
        assert_eq!(a.sparse.pixels(), b.sparse.pixels());
        assert_eq!(a.source_id, b.source_id);
        assert_eq!(a.cell_label, b.cell_label);
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert!(synth_sample(&mut stream(1, "s"), 4, 64, &spec()).is_err());
        assert!(synth_sample(&mut stream(1, "s"), 0, 16, &spec()).is_err());
    }

    #[test]
    fn balanced_dataset_has_exact_class_counts() {
        let ds = synth_dataset(7, 400, 32, &spec()).unwrap();
        let mut counts = [0usize; TISSUE_CLASS_COUNT];
        for s in &ds {
            counts[s.tissue_label] += 1;
        }
        assert_eq!(counts, [100; TISSUE_CLASS_COUNT]);
    }

    /// Naive DFT power of one row at integer frequency k (cycles per row).
    fn row_power(row: &[f32], k: usize) -> f64 {
        let n = row.len() as f64;
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (j, &v) in row.iter().enumerate() {
            let ang = std::f64::consts::TAU * k as f64 * j as f64 / n;
            re += f64::from(v) * ang.cos();
            im -= f64::from(v) * ang.sin();
        }
        (re * re + im * im) / n
    }

    /// Mean per-row power in the fine-texture band: the two stripe
    /// frequencies (periods 4 px and 2 px, i.e. bins w/4 and w/2). The
    /// blocky sparse view has its own step-edge harmonics at multiples of
    /// ~w/9, so the comparison is made exactly where the fine cue lives.
    fn fine_band_energy(tile: &ImageTile) -> f64 {
        let px = tile.pixels();
        let (h, w, _) = px.dim();
        let mut total = 0.0;
        for r in 0..h {
            let row: Vec<f32> = (0..w).map(|c| px[[r, c, 0]]).collect();
            total += row_power(&row, w / 4) + row_power(&row, w / 2);
        }
        total / h as f64
    }

    #[test]
    fn sparse_view_loses_fine_texture_power() {
        // The downsampled view must carry <10% of the dense view's
        // high-frequency energy, sample by sample.
        for i in 0..20 {
            let mut rng = indexed_stream(42, "freq", i);
            let s = synth_sample(&mut rng, (i % 4) as usize, 64, &spec()).unwrap();
            let dense_hf = fine_band_energy(&s.dense);
            let sparse_hf = fine_band_energy(&s.sparse);
            assert!(
                sparse_hf < 0.1 * dense_hf,
                "sample {i}: sparse high-band {sparse_hf:.5} vs dense {dense_hf:.5}"
            );
        }
    }

    #[test]
    fn stripe_period_tracks_the_fine_bit() {
        // Fine bit 0 → period 4 px (k = 16 of 64); fine bit 1 → period 2 px
        // (k = 32). The dominant high-band bin identifies the bit.
        for (class, expect_k) in [(0usize, 16usize), (1, 16), (2, 32), (3, 32)] {
            let s = synth_sample(&mut stream(9, "period"), class, 64, &spec()).unwrap();
            let px = s.dense.pixels();
            let mut best = (0usize, f64::MIN);
            for k in 12..=32 {
                let mut p = 0.0;
                for r in 0..64 {
                    let row: Vec<f32> = (0..64).map(|c| px[[r, c, 0]]).collect();
                    p += row_power(&row, k);
                }
                if p > best.1 {
                    best = (k, p);
                }
            }
            assert_eq!(best.0, expect_k, "class {class}");
        }
    }

    #[test]
    fn blob_polarity_tracks_the_coarse_bit() {
        for class in 0..4 {
            let (s, mask) =
                synth_sample_with_mask(&mut stream(13, "pol"), class, 64, &spec()).unwrap();
            let px = s.dense.pixels();
            let (mut blob_sum, mut blob_n, mut bg_sum, mut bg_n) = (0.0f64, 0u32, 0.0f64, 0u32);
            for r in 0..64 {
                for c in 0..64 {
                    let lum = f64::from(px[[r, c, 0]] + px[[r, c, 1]] + px[[r, c, 2]]) / 3.0;
                    if mask[[r, c]] > 0 {
                        blob_sum += lum;
                        blob_n += 1;
                    } else {
                        bg_sum += lum;
                        bg_n += 1;
                    }
                }
            }
            let diff = blob_sum / f64::from(blob_n) - bg_sum / f64::from(bg_n);
            if class & 1 == 0 {
                assert!(diff < -0.05, "class {class}: blobs not darker ({diff:.3})");
            } else {
                assert!(diff > 0.05, "class {class}: blobs not brighter ({diff:.3})");
            }
        }
    }

    #[test]
    fn values_stay_below_solarize_threshold() {
        // Solarization (threshold 0.5) in the default policy must not alias
        // the polarity cue; the generator keeps essentially all mass below
        // 0.5, so inversions touch at most stray noise-tail pixels.
        for class in 0..4 {
            let s = synth_sample(&mut stream(21, "sol"), class, 64, &spec()).unwrap();
            let over = s.dense.pixels().iter().filter(|&&v| v >= 0.5).count();
            let frac = over as f64 / s.dense.pixels().len() as f64;
            assert!(frac < 0.001, "class {class}: {frac:.4} of mass above 0.5");
        }
    }

    #[test]
    fn mask_ids_in_range_and_cell_label_is_majority() {
        let (s, mask) = synth_sample_with_mask(&mut stream(17, "cell"), 2, 64, &spec()).unwrap();
        let mut counts = [0usize; MASK_CLASS_COUNT];
        for &id in mask.iter() {
            assert!(usize::from(id) < MASK_CLASS_COUNT);
            counts[usize::from(id)] += 1;
        }
        let expect = counts
            .iter()
            .enumerate()
            .skip(1)
            .max_by_key(|&(_, n)| *n)
            .map(|(id, _)| id)
            .unwrap();
        assert_eq!(s.cell_label, Some(expect));
        assert!(counts[0] > 0, "expected some background pixels");
        assert!(
            counts.iter().skip(1).sum::<usize>() > 200,
            "expected substantial blob coverage"
        );
    }

    #[test]
    fn masks_are_independent_of_tissue_class() {
        // Same rng stream, different class → identical blob layout, so the
        // mask cannot encode tissue identity.
        let (_, m0) = synth_sample_with_mask(&mut stream(31, "ind"), 0, 64, &spec()).unwrap();
        let (_, m3) = synth_sample_with_mask(&mut stream(31, "ind"), 3, 64, &spec()).unwrap();
        assert_eq!(m0, m3);
    }

    #[test]
    fn restain_view_colors_blobs_only() {
        let spec = DegradeSpec::desk_default(Degradation::ExternalPair);
        let (s, mask) = synth_sample_with_mask(&mut stream(19, "re"), 1, 64, &spec).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let v = s.sparse.pixels()[[r, c, 0]]
                    + s.sparse.pixels()[[r, c, 1]]
                    + s.sparse.pixels()[[r, c, 2]];
                if mask[[r, c]] == 0 {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(v > 0.5);
                }
            }
        }
    }
}
