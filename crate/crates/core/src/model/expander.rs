//! Expander head: three dense layers with ReLU between them.
//!
//! The joint-embedding losses operate on the expander outputs, not on the
//! pooled encoder embeddings; probes and representation analysis use the
//! encoder embeddings directly.

use super::layers::{relu2, relu2_backward, Dense, DenseTrace};
use ndarray::{Array2, NdFloat};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Expander description: all three layers share the same output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpanderSpec {
    /// Output (and hidden) dimensionality.
    pub dim: usize,
}

impl ExpanderSpec {
    /// Number of parameters of an expander built on `in_dim` inputs:
    /// one `in_dim -> dim` layer plus two `dim -> dim` layers, with biases.
    pub fn param_count(&self, in_dim: usize) -> usize {
        (in_dim * self.dim + self.dim) + 2 * (self.dim * self.dim + self.dim)
    }
}

/// Three-layer MLP: `dense -> relu -> dense -> relu -> dense`.
pub struct Mlp<F> {
    l1: Dense<F>,
    l2: Dense<F>,
    l3: Dense<F>,
}

pub struct MlpTrace<F> {
    t1: DenseTrace<F>,
    t2: DenseTrace<F>,
    t3: DenseTrace<F>,
    r1: Array2<F>,
    r2: Array2<F>,
}

impl<F: NdFloat> Mlp<F> {
    pub fn new<R: Rng>(rng: &mut R, in_dim: usize, spec: ExpanderSpec) -> Self {
        Self {
            l1: Dense::new(rng, in_dim, spec.dim),
            l2: Dense::new(rng, spec.dim, spec.dim),
            l3: Dense::new(rng, spec.dim, spec.dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.l3.bias.len()
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count() + self.l3.param_count()
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let h = relu2(&self.l1.forward(x));
        let h = relu2(&self.l2.forward(&h));
        self.l3.forward(&h)
    }

    pub fn forward_t(&self, x: &Array2<F>) -> (Array2<F>, MlpTrace<F>) {
        let (p1, t1) = self.l1.forward_t(x);
        let r1 = relu2(&p1);
        let (p2, t2) = self.l2.forward_t(&r1);
        let r2 = relu2(&p2);
        let (out, t3) = self.l3.forward_t(&r2);
        (out, MlpTrace { t1, t2, t3, r1, r2 })
    }

    pub fn backward(&mut self, tr: &MlpTrace<F>, dy: &Array2<F>) -> Array2<F> {
        let dr2 = self.l3.backward(&tr.t3, dy);
        let dp2 = relu2_backward(&tr.r2, &dr2);
        let dr1 = self.l2.backward(&tr.t2, &dp2);
        let dp1 = relu2_backward(&tr.r1, &dr1);
        self.l1.backward(&tr.t1, &dp1)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [F], &mut [F])) {
        self.l1.visit(&format!("{prefix}fc1"), f);
        self.l2.visit(&format!("{prefix}fc2"), f);
        self.l3.visit(&format!("{prefix}fc3"), f);
    }

    pub fn visit_ro(&self, prefix: &str, f: &mut dyn FnMut(String, &[F])) {
        self.l1.visit_ro(&format!("{prefix}fc1"), f);
        self.l2.visit_ro(&format!("{prefix}fc2"), f);
        self.l3.visit_ro(&format!("{prefix}fc3"), f);
    }
}
