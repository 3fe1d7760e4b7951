//! Pooled per-layer activations of an encoder over a fixed probe set.

use ndarray::{s, Array2};

use super::AnalysisError;
use crate::data::{stack_tiles, ImageTile};
use crate::model::layers::gap_forward;
use crate::model::EncoderNet;

/// One matrix of globally-average-pooled activations per named layer, all
/// over the same sample rows.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    /// Identity of the producing model (config hash, run name, ...).
    pub model_id: String,
    /// `(layer name, N×C matrix)` in network order.
    pub layers: Vec<(String, Array2<f32>)>,
}

impl ActivationSet {
    pub fn get(&self, layer: &str) -> Option<&Array2<f32>> {
        self.layers
            .iter()
            .find(|(name, _)| name == layer)
            .map(|(_, m)| m)
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Number of probe samples (rows of every layer matrix).
    pub fn n_rows(&self) -> usize {
        self.layers.first().map_or(0, |(_, m)| m.nrows())
    }
}

/// Runs the probe set through the encoder and pools each requested tap's
/// feature map over its spatial extent, yielding one N×C matrix per layer.
///
/// Deterministic and row-pure: a sample's row depends only on that sample.
pub fn extract_activations(
    enc: &EncoderNet<f32>,
    layers: &[String],
    tiles: &[&ImageTile],
    model_id: &str,
) -> Result<ActivationSet, AnalysisError> {
    let taps = enc.spec().taps();
    let available: Vec<String> = taps.iter().map(|(n, _)| n.clone()).collect();
    for layer in layers {
        if !available.contains(layer) {
            return Err(AnalysisError::UnknownLayer {
                layer: layer.clone(),
                available,
            });
        }
    }
    if tiles.is_empty() {
        return Err(AnalysisError::EmptyProbeSet);
    }

    let n = tiles.len();
    let mut mats: Vec<(String, Array2<f32>)> = layers
        .iter()
        .map(|name| {
            let &(_, channels) = taps
                .iter()
                .find(|(tap, _)| tap == name)
                .expect("validated above");
            (name.clone(), Array2::zeros((n, channels)))
        })
        .collect();

    const CHUNK: usize = 64;
    for (ci, chunk) in tiles.chunks(CHUNK).enumerate() {
        let x = stack_tiles(chunk);
        let (_, tap_maps) = enc.forward_taps(&x);
        let rows = ci * CHUNK..ci * CHUNK + chunk.len();
        for (name, mat) in &mut mats {
            let map = tap_maps
                .iter()
                .find(|(tap, _)| tap == name)
                .map(|(_, m)| m)
                .expect("tap present: name came from the spec's tap table");
            mat.slice_mut(s![rows.clone(), ..]).assign(&gap_forward(map));
        }
    }

    Ok(ActivationSet {
        model_id: model_id.to_string(),
        layers: mats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderArch, EncoderSpec};
    use crate::rng::stream;
    use ndarray::Array3;

    fn tiny_encoder(seed: u64) -> EncoderNet<f32> {
        EncoderSpec::new(EncoderArch::DeskCnnTiny, 16)
            .unwrap()
            .build::<f32, _>(&mut stream(seed, "enc"))
    }

    fn random_tile(seed: u64, px: usize) -> ImageTile {
        use rand::Rng;
        let mut rng = stream(seed, "tile");
        ImageTile::new(Array3::from_shape_fn((px, px, 3), |_| rng.gen::<f32>())).unwrap()
    }

    fn all_layers(enc: &EncoderNet<f32>) -> Vec<String> {
        enc.spec().taps().into_iter().map(|(n, _)| n).collect()
    }

    #[test]
    fn single_image_gives_one_row_per_layer() {
        let enc = tiny_encoder(0);
        let tile = random_tile(1, 16);
        let layers = all_layers(&enc);
        let acts = extract_activations(&enc, &layers, &[&tile], "m0").unwrap();
        assert_eq!(acts.n_rows(), 1);
        for (_, m) in &acts.layers {
            assert_eq!(m.nrows(), 1);
            assert!(m.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn duplicated_image_produces_identical_rows() {
        let enc = tiny_encoder(0);
        let tile = random_tile(2, 16);
        let layers = all_layers(&enc);
        let acts = extract_activations(&enc, &layers, &[&tile, &tile], "m0").unwrap();
        for (_, m) in &acts.layers {
            assert_eq!(m.row(0), m.row(1));
        }
    }

    #[test]
    fn pooled_width_matches_the_tap_channel_table() {
        let enc = tiny_encoder(3);
        let tiles: Vec<ImageTile> = (0..3).map(|i| random_tile(10 + i, 16)).collect();
        let refs: Vec<&ImageTile> = tiles.iter().collect();
        let layers = all_layers(&enc);
        let acts = extract_activations(&enc, &layers, &refs, "m0").unwrap();
        for (name, channels) in enc.spec().taps() {
            assert_eq!(
                acts.get(&name).unwrap().ncols(),
                channels,
                "layer {name} width"
            );
        }
    }

    #[test]
    fn unknown_layer_is_an_argument_error() {
        let enc = tiny_encoder(0);
        let tile = random_tile(4, 16);
        let err =
            extract_activations(&enc, &["conv9".to_string()], &[&tile], "m0").unwrap_err();
        match err {
            AnalysisError::UnknownLayer { layer, available } => {
                assert_eq!(layer, "conv9");
                assert!(available.contains(&"conv1".to_string()));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn extraction_is_deterministic_and_chunking_invisible() {
        let enc = tiny_encoder(5);
        // 70 tiles forces two chunks (64 + 6).
        let tiles: Vec<ImageTile> = (0..70).map(|i| random_tile(100 + i, 16)).collect();
        let refs: Vec<&ImageTile> = tiles.iter().collect();
        let layers = vec!["conv2".to_string()];
        let a = extract_activations(&enc, &layers, &refs, "m0").unwrap();
        let b = extract_activations(&enc, &layers, &refs, "m0").unwrap();
        assert_eq!(a.layers[0].1, b.layers[0].1);
        // Row 65 standalone equals row 65 in the batch (row purity).
        let solo = extract_activations(&enc, &layers, &[&tiles[65]], "m0").unwrap();
        assert_eq!(solo.layers[0].1.row(0), a.layers[0].1.row(65));
    }
}
