//! Linear probe: a single dense layer with softmax, trained on frozen
//! embeddings to measure how linearly accessible a task is.

use super::layers::Dense;
use ndarray::{Array2, Axis};
use rand::Rng;

/// Numerically stable row-wise softmax.
pub fn softmax(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub struct LinearProbe {
    pub fc: Dense<f32>,
}

impl LinearProbe {
    pub fn new<R: Rng>(rng: &mut R, in_dim: usize, n_classes: usize) -> Self {
        Self {
            fc: Dense::new(rng, in_dim, n_classes),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.fc.weight.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.fc.weight.ncols()
    }

    /// Pre-softmax scores.
    pub fn logits(&self, emb: &Array2<f32>) -> Array2<f32> {
        self.fc.forward(emb)
    }

    /// Class probabilities (rows sum to 1).
    pub fn forward(&self, emb: &Array2<f32>) -> Array2<f32> {
        softmax(&self.logits(emb))
    }

    /// Most probable class per row.
    pub fn predict(&self, emb: &Array2<f32>) -> Vec<usize> {
        self.logits(emb)
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .expect("at least one class")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_rows_sum_to_one_and_lie_in_unit_interval() {
        let logits = array![[3.0f32, -1.0, 0.5], [0.0, 0.0, 0.0], [50.0, -50.0, 0.0]];
        let p = softmax(&logits);
        for row in p.rows() {
            let sum: f32 = row.sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn two_class_probe_matches_logistic_closed_form() {
        let mut probe = LinearProbe::new(&mut ChaCha8Rng::seed_from_u64(0), 2, 2);
        probe.fc.weight = array![[1.0f32, -1.0], [0.5, 0.25]];
        probe.fc.bias = array![0.1f32, -0.2];
        let emb = array![[0.3f32, -0.7]];
        let p = probe.forward(&emb);
        // p(class 0) = sigmoid(z0 - z1)
        let z0 = 0.3 * 1.0 + (-0.7) * 0.5 + 0.1;
        let z1 = 0.3 * (-1.0) + (-0.7) * 0.25 + (-0.2);
        let want = 1.0 / (1.0 + (-(z0 - z1) as f64).exp()) as f64;
        assert!((p[(0, 0)] as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn predict_picks_argmax() {
        let mut probe = LinearProbe::new(&mut ChaCha8Rng::seed_from_u64(0), 2, 3);
        probe.fc.weight = array![[1.0f32, 0.0, -1.0], [0.0, 1.0, 0.0]];
        probe.fc.bias = array![0.0f32, 0.0, 0.0];
        let emb = array![[2.0f32, 0.1], [-3.0, 0.0], [0.0, 5.0]];
        assert_eq!(probe.predict(&emb), vec![0, 2, 1]);
    }
}
