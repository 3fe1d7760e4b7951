//! Stochastic augmentation policy applied independently to each training view.
//!
//! Augmentations run in a fixed documented order — flip, crop, Gaussian
//! noise, rotation, solarize, color jitter — each gated by its own
//! application probability. All randomness comes from the caller-supplied
//! stream, so a seed fully determines the output.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tile::ImageTile;
use super::DataError;

/// Per-augmentation application probabilities plus the fixed parameter
/// constants the transform family needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    /// Probability of a mirror flip (orientation chosen uniformly from
    /// left/right and up/down).
    pub flip: f64,
    /// Probability of a random resized crop.
    pub crop: f64,
    /// Probability of additive Gaussian pixel noise.
    pub gaussian_noise: f64,
    /// Probability of a rotation (right-angle by default).
    pub rotation: f64,
    /// Probability of solarization (invert pixels above a threshold).
    pub solarize: f64,
    /// Probability of brightness/contrast/saturation jitter.
    pub color_jitter: f64,
    /// Area-fraction range for the random crop.
    pub crop_scale_range: (f64, f64),
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    /// When true, rotations use a uniformly random angle (nearest-neighbor
    /// resampling, zero fill); when false, a right angle from
    /// {90°, 180°, 270°}.
    pub free_angle_rotation: bool,
    /// Pixels at or above this value are inverted by solarization.
    pub solarize_threshold: f32,
    /// Half-width of the uniform jitter factor range `[1−s, 1+s]` applied to
    /// brightness, contrast, and saturation.
    pub jitter_strength: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            flip: 1.0,
            crop: 1.0,
            gaussian_noise: 0.3,
            rotation: 0.4,
            solarize: 0.3,
            color_jitter: 1.0,
            crop_scale_range: (0.75, 1.0),
            noise_sigma: 0.05,
            free_angle_rotation: false,
            solarize_threshold: 0.5,
            jitter_strength: 0.2,
        }
    }
}

impl AugmentationPolicy {
    /// A no-op policy: every probability zero.
    pub fn none() -> Self {
        Self {
            flip: 0.0,
            crop: 0.0,
            gaussian_noise: 0.0,
            rotation: 0.0,
            solarize: 0.0,
            color_jitter: 0.0,
            ..Self::default()
        }
    }

    /// Checks probabilities and parameter ranges.
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, p) in [
            ("flip", self.flip),
            ("crop", self.crop),
            ("gaussian_noise", self.gaussian_noise),
            ("rotation", self.rotation),
            ("solarize", self.solarize),
            ("color_jitter", self.color_jitter),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(DataError::BadArg {
                    name: "policy",
                    detail: format!("probability for {name} is {p}, outside [0,1]"),
                });
            }
        }
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(DataError::BadArg {
                name: "crop_scale_range",
                detail: format!("({lo}, {hi}) not within (0, 1] with lo <= hi"),
            });
        }
        if self.noise_sigma < 0.0 || self.jitter_strength < 0.0 {
            return Err(DataError::BadArg {
                name: "policy",
                detail: "noise sigma and jitter strength must be non-negative".into(),
            });
        }
        Ok(())
    }
}

/// Applies the policy to one tile. Each augmentation fires independently with
/// its configured probability; the order is fixed (flip, crop, noise,
/// rotation, solarize, color jitter). Output dimensions equal input
/// dimensions and values are clipped to `[0,1]`.
pub fn augment(
    img: &ImageTile,
    policy: &AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTile, DataError> {
    policy.validate()?;
    let mut px = img.pixels().clone();

    if rng.gen::<f64>() < policy.flip {
        if rng.gen::<bool>() {
            px = flip_lr(&px);
        } else {
            px = flip_ud(&px);
        }
    }
    if rng.gen::<f64>() < policy.crop {
        px = random_resized_crop(&px, policy.crop_scale_range, rng);
    }
    if rng.gen::<f64>() < policy.gaussian_noise {
        add_gaussian_noise(&mut px, policy.noise_sigma, rng);
    }
    if rng.gen::<f64>() < policy.rotation {
        px = if policy.free_angle_rotation {
            rotate_free(&px, rng.gen::<f64>() * std::f64::consts::TAU)
        } else {
            match rng.gen_range(0u8..3) {
                0 => rot90(&px),
                1 => rot90(&rot90(&px)),
                _ => rot90(&rot90(&rot90(&px))),
            }
        };
    }
    if rng.gen::<f64>() < policy.solarize {
        solarize(&mut px, policy.solarize_threshold);
    }
    if rng.gen::<f64>() < policy.color_jitter {
        color_jitter(&mut px, policy.jitter_strength, rng);
    }

    px.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(ImageTile::from_clipped(px))
}

fn flip_lr(px: &Array3<f32>) -> Array3<f32> {
    let (h, w, _) = px.dim();
    Array3::from_shape_fn((h, w, 3), |(r, c, ch)| px[[r, w - 1 - c, ch]])
}

fn flip_ud(px: &Array3<f32>) -> Array3<f32> {
    let (h, w, _) = px.dim();
    Array3::from_shape_fn((h, w, 3), |(r, c, ch)| px[[h - 1 - r, c, ch]])
}

/// Rotates 90° counter-clockwise (square tiles).
fn rot90(px: &Array3<f32>) -> Array3<f32> {
    let (h, w, _) = px.dim();
    debug_assert_eq!(h, w, "right-angle rotation expects square tiles");
    Array3::from_shape_fn((w, h, 3), |(r, c, ch)| px[[c, w - 1 - r, ch]])
}

/// Rotates by an arbitrary angle about the tile center with nearest-neighbor
/// sampling; samples falling outside the source are zero.
fn rotate_free(px: &Array3<f32>, angle: f64) -> Array3<f32> {
    let (h, w, _) = px.dim();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let sy = (cos * dy - sin * dx + cy).round();
        let sx = (sin * dy + cos * dx + cx).round();
        if sy >= 0.0 && sy < h as f64 && sx >= 0.0 && sx < w as f64 {
            px[[sy as usize, sx as usize, ch]]
        } else {
            0.0
        }
    })
}

/// Picks a random window whose area is a `scale_range` fraction of the tile,
/// then resizes it back to the original side with bilinear interpolation.
fn random_resized_crop(
    px: &Array3<f32>,
    scale_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Array3<f32> {
    let (h, w, _) = px.dim();
    let scale = rng.gen_range(scale_range.0..=scale_range.1);
    let side_frac = scale.sqrt();
    let ch = ((h as f64 * side_frac).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side_frac).round() as usize).clamp(1, w);
    let top = rng.gen_range(0..=h - ch);
    let left = rng.gen_range(0..=w - cw);
    if ch == h && cw == w {
        return px.clone();
    }
    let window = px.slice(ndarray::s![top..top + ch, left..left + cw, ..]);
    resize_bilinear(&window.to_owned(), h, w)
}

/// Bilinear resize of an H×W×C array (align-corners convention when the
/// output has more than one sample per axis).
pub fn resize_bilinear(px: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, channels) = px.dim();
    let fy = if out_h > 1 {
        (h as f64 - 1.0) / (out_h as f64 - 1.0)
    } else {
        0.0
    };
    let fx = if out_w > 1 {
        (w as f64 - 1.0) / (out_w as f64 - 1.0)
    } else {
        0.0
    };
    Array3::from_shape_fn((out_h, out_w, channels), |(r, c, ch)| {
        let sy = r as f64 * fy;
        let sx = c as f64 * fx;
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let wy = (sy - y0 as f64) as f32;
        let wx = (sx - x0 as f64) as f32;
        let top = px[[y0, x0, ch]] * (1.0 - wx) + px[[y0, x1, ch]] * wx;
        let bot = px[[y1, x0, ch]] * (1.0 - wx) + px[[y1, x1, ch]] * wx;
        top * (1.0 - wy) + bot * wy
    })
}

fn add_gaussian_noise(px: &mut Array3<f32>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let dist = Normal::new(0.0f64, sigma).expect("validated sigma");
    px.mapv_inplace(|v| v + dist.sample(rng) as f32);
}

fn solarize(px: &mut Array3<f32>, threshold: f32) {
    px.mapv_inplace(|v| if v >= threshold { 1.0 - v } else { v });
}

/// Scales brightness, contrast (about the image mean), and saturation (about
/// per-pixel luma) by independent factors drawn from `[1−s, 1+s]`.
fn color_jitter(px: &mut Array3<f32>, strength: f64, rng: &mut ChaCha8Rng) {
    let fb = rng.gen_range(1.0 - strength..=1.0 + strength) as f32;
    let fc = rng.gen_range(1.0 - strength..=1.0 + strength) as f32;
    let fs = rng.gen_range(1.0 - strength..=1.0 + strength) as f32;
    px.mapv_inplace(|v| v * fb);
    let mean = px.iter().sum::<f32>() / px.len() as f32;
    px.mapv_inplace(|v| mean + (v - mean) * fc);
    let (h, w, _) = px.dim();
    for r in 0..h {
        for c in 0..w {
            let luma = 0.299 * px[[r, c, 0]] + 0.587 * px[[r, c, 1]] + 0.114 * px[[r, c, 2]];
            for ch in 0..3 {
                px[[r, c, ch]] = luma + (px[[r, c, ch]] - luma) * fs;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::Rng;

    fn ramp_tile(side: usize) -> ImageTile {
        let n = (side * side * 3 - 1) as f32;
        let px = Array3::from_shape_fn((side, side, 3), |(r, c, ch)| {
            ((r * side + c) * 3 + ch) as f32 / n
        });
        ImageTile::new(px).unwrap()
    }

    #[test]
    fn zero_policy_is_identity() {
        let img = ramp_tile(8);
        let mut rng = stream(1, "aug");
        let out = augment(&img, &AugmentationPolicy::none(), &mut rng).unwrap();
        assert_eq!(img.pixels(), out.pixels());
    }

    #[test]
    fn default_policy_is_deterministic_per_seed() {
        let img = ramp_tile(16);
        let policy = AugmentationPolicy::default();
        let a = augment(&img, &policy, &mut stream(7, "aug")).unwrap();
        let b = augment(&img, &policy, &mut stream(7, "aug")).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        let c = augment(&img, &policy, &mut stream(8, "aug")).unwrap();
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn lr_flip_is_an_involution() {
        let img = ramp_tile(4);
        let once = flip_lr(img.pixels());
        assert_ne!(&once, img.pixels());
        let twice = flip_lr(&once);
        assert_eq!(&twice, img.pixels());
        let ud_twice = flip_ud(&flip_ud(img.pixels()));
        assert_eq!(&ud_twice, img.pixels());
    }

    #[test]
    fn flip_only_policy_applied_twice_recovers_input() {
        // With identical seeds the same flip orientation fires both times,
        // and each orientation is self-inverse.
        let img = ramp_tile(4);
        let policy = AugmentationPolicy {
            flip: 1.0,
            ..AugmentationPolicy::none()
        };
        for seed in 0..6 {
            let once = augment(&img, &policy, &mut stream(seed, "flip")).unwrap();
            let twice = augment(&once, &policy, &mut stream(seed, "flip")).unwrap();
            assert_eq!(twice.pixels(), img.pixels(), "seed {seed}");
        }
    }

    #[test]
    fn right_angle_rotation_four_times_is_identity() {
        let img = ramp_tile(6);
        let p = img.pixels();
        let r4 = rot90(&rot90(&rot90(&rot90(p))));
        assert_eq!(&r4, p);
        // 90° moves the top-right corner to the top-left.
        let r1 = rot90(p);
        assert_eq!(r1[[0, 0, 0]], p[[0, 5, 0]]);
    }

    #[test]
    fn solarize_inverts_above_threshold_only() {
        let mut px = Array3::zeros((1, 4, 3));
        px[[0, 0, 0]] = 0.2;
        px[[0, 1, 0]] = 0.5;
        px[[0, 2, 0]] = 0.7;
        px[[0, 3, 0]] = 1.0;
        solarize(&mut px, 0.5);
        assert!((px[[0, 0, 0]] - 0.2).abs() < 1e-7);
        assert!((px[[0, 1, 0]] - 0.5).abs() < 1e-7);
        assert!((px[[0, 2, 0]] - 0.3).abs() < 1e-7);
        assert!((px[[0, 3, 0]] - 0.0).abs() < 1e-7);
    }

    #[test]
    fn noise_matches_configured_sigma() {
        let mut px = Array3::from_elem((64, 64, 3), 0.5f32);
        let mut rng = stream(3, "noise");
        add_gaussian_noise(&mut px, 0.05, &mut rng);
        let n = px.len() as f64;
        let mean = px.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = px
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!((mean - 0.5).abs() < 3e-3, "mean {mean}");
        assert!((var.sqrt() - 0.05).abs() < 3e-3, "sd {}", var.sqrt());
    }

    #[test]
    fn bilinear_resize_identity_and_linear_ramp() {
        let img = ramp_tile(5);
        let same = resize_bilinear(img.pixels(), 5, 5);
        for (a, b) in same.iter().zip(img.pixels().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        // A column ramp stays a ramp under align-corners upsampling.
        let px = Array3::from_shape_fn((2, 3, 3), |(_, c, _)| c as f32 / 2.0);
        let up = resize_bilinear(&px, 2, 5);
        for c in 0..5 {
            let expect = c as f32 / 4.0;
            assert!((up[[0, c, 0]] - expect).abs() < 1e-6, "col {c}");
        }
    }

    #[test]
    fn crop_with_unit_scale_is_identity() {
        let img = ramp_tile(8);
        let policy = AugmentationPolicy {
            crop: 1.0,
            crop_scale_range: (1.0, 1.0),
            ..AugmentationPolicy::none()
        };
        let out = augment(&img, &policy, &mut stream(5, "crop")).unwrap();
        assert_eq!(out.pixels(), img.pixels());
    }

    #[test]
    fn invalid_policies_are_rejected() {
        let mut p = AugmentationPolicy::default();
        p.flip = 1.5;
        assert!(p.validate().is_err());
        let mut q = AugmentationPolicy::default();
        q.crop_scale_range = (0.0, 0.5);
        assert!(q.validate().is_err());
        let mut r = AugmentationPolicy::default();
        r.noise_sigma = -0.1;
        assert!(r.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn output_stays_in_range_with_unchanged_dims(seed in 0u64..1000) {
            let mut src = stream(seed, "prop-src");
            let px = Array3::from_shape_fn((12, 12, 3), |_| src.gen::<f32>());
            let img = ImageTile::new(px).unwrap();
            let policy = AugmentationPolicy {
                free_angle_rotation: seed % 2 == 0,
                ..AugmentationPolicy::default()
            };
            let out = augment(&img, &policy, &mut stream(seed, "prop")).unwrap();
            prop_assert_eq!(out.height(), 12);
            prop_assert_eq!(out.width(), 12);
            for &v in out.pixels().iter() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
