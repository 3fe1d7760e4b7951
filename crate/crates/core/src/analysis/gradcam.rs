//! GradCAM saliency maps through encoder conv taps.
//!
//! For a scalar target `t` (a probe class logit or the embedding norm), the
//! channel weights are the spatial means of `∂t/∂A` at the chosen tap `A`;
//! the heatmap is `ReLU(Σ_k α_k A_k)`, bilinearly upsampled to the input
//! size and max-normalized. Encoder *parameters* are never modified, only
//! its gradient scratch buffers (which are zeroed again afterwards).

use ndarray::{Array2, Axis};

use super::AnalysisError;
use crate::data::augment::resize_bilinear;
use crate::data::{stack_tiles, ImageTile};
use crate::model::{EncoderNet, LinearProbe};

/// What scalar the heatmap explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCamTarget {
    /// The probe logit of the probe's own argmax class for this image.
    PredictedClass,
    /// The probe logit of a fixed class.
    ClassId(usize),
    /// Half the squared L2 norm of the pooled embedding (probe-free).
    EmbeddingNorm,
}

impl std::fmt::Display for GradCamTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradCamTarget::PredictedClass => f.write_str("predicted_class"),
            GradCamTarget::ClassId(c) => write!(f, "class_{c}"),
            GradCamTarget::EmbeddingNorm => f.write_str("embedding_norm"),
        }
    }
}

/// A saliency map at input resolution, max-normalized to [0,1].
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub values: Array2<f32>,
    pub layer: String,
    pub target: String,
    /// True when the raw map was identically zero (e.g. zero gradient), so
    /// no normalization was possible.
    pub zero: bool,
}

fn zero_grads(enc: &mut EncoderNet<f32>) {
    enc.visit("", &mut |_, _, g| g.fill(0.0));
}

/// Computes the GradCAM heatmap of `target` at conv tap `layer` for one
/// image. Class targets require `probe`; the embedding-norm target does not.
pub fn gradcam(
    enc: &mut EncoderNet<f32>,
    probe: Option<&LinearProbe>,
    tile: &ImageTile,
    layer: &str,
    target: GradCamTarget,
) -> Result<Heatmap, AnalysisError> {
    let taps = enc.spec().taps();
    if !taps.iter().any(|(name, _)| name == layer) {
        return Err(AnalysisError::UnknownLayer {
            layer: layer.to_string(),
            available: taps.into_iter().map(|(n, _)| n).collect(),
        });
    }

    let x = stack_tiles(&[tile]);
    let (emb, trace) = enc.forward_t(&x);
    let (_, tap_maps) = enc.forward_taps(&x);

    // ∂target/∂embedding for the single row.
    let demb: Array2<f32> = match target {
        GradCamTarget::EmbeddingNorm => emb.clone(),
        GradCamTarget::PredictedClass | GradCamTarget::ClassId(_) => {
            let probe = probe.ok_or_else(|| AnalysisError::MissingProbe {
                target: target.to_string(),
            })?;
            if probe.in_dim() != emb.ncols() {
                return Err(AnalysisError::DimMismatch {
                    probe_dim: probe.in_dim(),
                    enc_dim: emb.ncols(),
                });
            }
            let class = match target {
                GradCamTarget::ClassId(c) => c,
                _ => probe.predict(&emb)[0],
            };
            if class >= probe.n_classes() {
                return Err(AnalysisError::BadClass {
                    class,
                    n_classes: probe.n_classes(),
                });
            }
            // logit_c = emb · W[:,c] + b_c, so ∂logit_c/∂emb = W[:,c].
            probe
                .fc
                .weight
                .column(class)
                .to_owned()
                .insert_axis(Axis(0))
        }
    };

    zero_grads(enc);
    let mut tap_grads = Vec::new();
    enc.backward_taps(&trace, &demb, Some(&mut tap_grads));
    zero_grads(enc);

    let grad = &tap_grads
        .iter()
        .find(|(name, _)| name == layer)
        .expect("layer validated against the tap table")
        .1;
    let act = &tap_maps
        .iter()
        .find(|(name, _)| name == layer)
        .expect("layer validated against the tap table")
        .1;

    // α_k = spatial mean of the gradient; cam = ReLU(Σ_k α_k A_k).
    let (_, channels, th, tw) = act.dim();
    let mut cam = Array2::<f32>::zeros((th, tw));
    for k in 0..channels {
        let g = grad.index_axis(Axis(0), 0);
        let alpha: f32 = g.index_axis(Axis(0), k).mean().expect("nonempty map");
        let a = act.index_axis(Axis(0), 0);
        cam += &a.index_axis(Axis(0), k).mapv(|v| alpha * v);
    }
    cam.mapv_inplace(|v| v.max(0.0));

    // Upsample to input resolution and max-normalize.
    let (in_h, in_w) = (tile.height(), tile.width());
    let cam3 = cam.insert_axis(Axis(2));
    let up3 = resize_bilinear(&cam3, in_h, in_w);
    let mut values = up3.index_axis(Axis(2), 0).to_owned();
    let max = values.iter().cloned().fold(0.0f32, f32::max);
    let zero = max <= 0.0;
    if !zero {
        values.mapv_inplace(|v| v / max);
    }

    Ok(Heatmap {
        values,
        layer: layer.to_string(),
        target: target.to_string(),
        zero,
    })
}

/// Fraction of total heatmap mass falling inside `region > 0`. Returns 0
/// for an identically-zero heatmap.
pub fn heatmap_mass_in_region(heatmap: &Heatmap, region: &Array2<u8>) -> f64 {
    assert_eq!(
        heatmap.values.dim(),
        region.dim(),
        "heatmap and region must share dimensions"
    );
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for (v, r) in heatmap.values.iter().zip(region.iter()) {
        let v = f64::from(*v);
        total += v;
        if *r > 0 {
            inside += v;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderArch, EncoderSpec};
    use crate::rng::stream;
    use ndarray::Array3;
    use sha2::{Digest, Sha256};

    fn tiny_encoder(seed: u64) -> EncoderNet<f32> {
        EncoderSpec::new(EncoderArch::DeskCnnTiny, 16)
            .unwrap()
            .build::<f32, _>(&mut stream(seed, "enc"))
    }

    fn random_tile(seed: u64) -> ImageTile {
        use rand::Rng;
        let mut rng = stream(seed, "tile");
        ImageTile::new(Array3::from_shape_fn((16, 16, 3), |_| rng.gen::<f32>())).unwrap()
    }

    fn probe_for(enc: &EncoderNet<f32>, n_classes: usize, seed: u64) -> LinearProbe {
        LinearProbe::new(&mut stream(seed, "probe"), enc.embedding_dim(), n_classes)
    }

    fn param_checksum(enc: &EncoderNet<f32>) -> [u8; 32] {
        let mut hasher = Sha256::new();
        enc.visit_ro("", &mut |_, v| {
            for x in v {
                hasher.update(x.to_le_bytes());
            }
        });
        hasher.finalize().into()
    }

    #[test]
    fn nonzero_heatmap_is_normalized_to_unit_max() {
        let mut enc = tiny_encoder(0);
        let probe = probe_for(&enc, 4, 1);
        let tile = random_tile(2);
        let hm = gradcam(&mut enc, Some(&probe), &tile, "conv2", GradCamTarget::ClassId(1))
            .unwrap();
        assert!(!hm.zero);
        assert_eq!(hm.values.dim(), (16, 16));
        let max = hm.values.iter().cloned().fold(0.0f32, f32::max);
        assert!((max - 1.0).abs() < 1e-6, "max {max}");
        assert!(hm.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_weight_class_row_yields_flagged_zero_heatmap() {
        let mut enc = tiny_encoder(0);
        let mut probe = probe_for(&enc, 4, 1);
        probe.fc.weight.column_mut(2).fill(0.0);
        let tile = random_tile(3);
        let hm = gradcam(&mut enc, Some(&probe), &tile, "conv1", GradCamTarget::ClassId(2))
            .unwrap();
        assert!(hm.zero);
        assert!(hm.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_is_invariant_to_uniform_logit_shift() {
        let mut enc = tiny_encoder(4);
        let probe = probe_for(&enc, 3, 5);
        let mut shifted = probe_for(&enc, 3, 5);
        shifted.fc.bias += 10.0;
        let tile = random_tile(6);
        let a = gradcam(&mut enc, Some(&probe), &tile, "conv3", GradCamTarget::PredictedClass)
            .unwrap();
        let b = gradcam(&mut enc, Some(&shifted), &tile, "conv3", GradCamTarget::PredictedClass)
            .unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn predicted_class_target_matches_explicit_argmax_class() {
        let mut enc = tiny_encoder(7);
        let probe = probe_for(&enc, 4, 8);
        let tile = random_tile(9);
        let x = stack_tiles(&[&tile]);
        let class = probe.predict(&enc.forward(&x))[0];
        let auto = gradcam(&mut enc, Some(&probe), &tile, "conv2", GradCamTarget::PredictedClass)
            .unwrap();
        let fixed = gradcam(
            &mut enc,
            Some(&probe),
            &tile,
            "conv2",
            GradCamTarget::ClassId(class),
        )
        .unwrap();
        assert_eq!(auto.values, fixed.values);
    }

    #[test]
    fn embedding_norm_target_needs_no_probe_and_parameters_stay_frozen() {
        let mut enc = tiny_encoder(10);
        let before = param_checksum(&enc);
        let tile = random_tile(11);
        let hm = gradcam(&mut enc, None, &tile, "conv4", GradCamTarget::EmbeddingNorm).unwrap();
        assert!(!hm.zero, "ReLU activations with their own gradient are nonnegative");
        assert_eq!(param_checksum(&enc), before);
        // Gradient scratch buffers are left zeroed.
        let mut dirty = false;
        enc.visit("", &mut |_, _, g| dirty |= g.iter().any(|&v| v != 0.0));
        assert!(!dirty);
    }

    #[test]
    fn invalid_requests_are_reported() {
        let mut enc = tiny_encoder(12);
        let probe = probe_for(&enc, 4, 13);
        let tile = random_tile(14);
        assert!(matches!(
            gradcam(&mut enc, Some(&probe), &tile, "conv9", GradCamTarget::ClassId(0)),
            Err(AnalysisError::UnknownLayer { .. })
        ));
        assert!(matches!(
            gradcam(&mut enc, None, &tile, "conv1", GradCamTarget::ClassId(0)),
            Err(AnalysisError::MissingProbe { .. })
        ));
        assert!(matches!(
            gradcam(&mut enc, Some(&probe), &tile, "conv1", GradCamTarget::ClassId(9)),
            Err(AnalysisError::BadClass { class: 9, n_classes: 4 })
        ));
        let wide = LinearProbe::new(&mut stream(15, "probe"), 999, 4);
        assert!(matches!(
            gradcam(&mut enc, Some(&wide), &tile, "conv1", GradCamTarget::ClassId(0)),
            Err(AnalysisError::DimMismatch { .. })
        ));
    }

    #[test]
    fn region_mass_matches_hand_computation() {
        let hm = Heatmap {
            values: ndarray::array![[1.0f32, 0.0], [0.0, 1.0]],
            layer: "conv1".into(),
            target: "class_0".into(),
            zero: false,
        };
        let region = ndarray::array![[1u8, 1], [0, 0]];
        let mass = heatmap_mass_in_region(&hm, &region);
        assert!((mass - 0.5).abs() < 1e-12);
        let zero = Heatmap {
            values: Array2::zeros((2, 2)),
            layer: "conv1".into(),
            target: "class_0".into(),
            zero: true,
        };
        assert_eq!(heatmap_mass_in_region(&zero, &region), 0.0);
    }
}
