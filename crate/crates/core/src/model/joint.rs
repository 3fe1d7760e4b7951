//! The two-branch joint model: per-branch encoder + expander.
//!
//! Branch `A` consumes the information-sparse view, branch `B` the
//! information-dense view. With `shared = true` there is exactly one
//! parameter set: branch `B` accessors resolve to branch `A`'s modules, so
//! the branches cannot drift apart by construction — both views' gradients
//! accumulate into the same buffers before each optimiser step.

use super::encoder::{EncoderNet, EncoderSpec, EncoderTrace};
use super::expander::{ExpanderSpec, Mlp, MlpTrace};
use crate::rng;
use ndarray::{Array2, Array4};
use sha2::{Digest, Sha256};

/// Which branch of the joint model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Information-sparse branch.
    A,
    /// Information-dense branch.
    B,
}

pub struct JointModel {
    pub encoder_spec: EncoderSpec,
    pub expander_spec: ExpanderSpec,
    pub shared: bool,
    enc_a: EncoderNet<f32>,
    exp_a: Mlp<f32>,
    enc_b: Option<EncoderNet<f32>>,
    exp_b: Option<Mlp<f32>>,
}

/// Cache of one branch forward pass (encoder + expander).
pub struct JointTrace {
    enc: EncoderTrace<f32>,
    mlp: MlpTrace<f32>,
    pub embedding: Array2<f32>,
}

impl JointModel {
    /// Build a fresh model. Branch parameter streams are derived from
    /// `model_seed` with distinct tags, so even identical architectures
    /// start from different weights unless `shared` is set.
    pub fn new(
        encoder_spec: EncoderSpec,
        expander_spec: ExpanderSpec,
        shared: bool,
        model_seed: u64,
    ) -> Self {
        let mut rng_a = rng::stream(model_seed, "model/a");
        let enc_a = encoder_spec.build::<f32, _>(&mut rng_a);
        let exp_a = Mlp::new(&mut rng_a, encoder_spec.embedding_dim(), expander_spec);
        let (enc_b, exp_b) = if shared {
            (None, None)
        } else {
            let mut rng_b = rng::stream(model_seed, "model/b");
            let enc = encoder_spec.build::<f32, _>(&mut rng_b);
            let exp = Mlp::new(&mut rng_b, encoder_spec.embedding_dim(), expander_spec);
            (Some(enc), Some(exp))
        };
        Self {
            encoder_spec,
            expander_spec,
            shared,
            enc_a,
            exp_a,
            enc_b,
            exp_b,
        }
    }

    pub fn encoder(&self, branch: Branch) -> &EncoderNet<f32> {
        match branch {
            Branch::A => &self.enc_a,
            Branch::B => self.enc_b.as_ref().unwrap_or(&self.enc_a),
        }
    }

    pub fn expander(&self, branch: Branch) -> &Mlp<f32> {
        match branch {
            Branch::A => &self.exp_a,
            Branch::B => self.exp_b.as_ref().unwrap_or(&self.exp_a),
        }
    }

    /// Mutable encoder access (needed by gradient-based analysis, which
    /// scribbles on gradient buffers but never on parameters).
    pub fn encoder_mut(&mut self, branch: Branch) -> &mut EncoderNet<f32> {
        match branch {
            Branch::A => &mut self.enc_a,
            Branch::B => self.enc_b.as_mut().unwrap_or(&mut self.enc_a),
        }
    }

    fn expander_mut(&mut self, branch: Branch) -> &mut Mlp<f32> {
        match branch {
            Branch::A => &mut self.exp_a,
            Branch::B => self.exp_b.as_mut().unwrap_or(&mut self.exp_a),
        }
    }

    /// Pooled encoder embedding (inference; no trace).
    pub fn embed(&self, branch: Branch, x: &Array4<f32>) -> Array2<f32> {
        self.encoder(branch).forward(x)
    }

    /// Training forward through encoder and expander; returns the expander
    /// output (loss input) and the trace for [`Self::backward_branch`].
    pub fn forward_branch_t(&self, branch: Branch, x: &Array4<f32>) -> (Array2<f32>, JointTrace) {
        let (emb, enc_trace) = self.encoder(branch).forward_t(x);
        let (z, mlp_trace) = self.expander(branch).forward_t(&emb);
        (
            z,
            JointTrace {
                enc: enc_trace,
                mlp: mlp_trace,
                embedding: emb,
            },
        )
    }

    /// Accumulate gradients of one branch pass into its parameter buffers.
    pub fn backward_branch(&mut self, branch: Branch, trace: &JointTrace, dz: &Array2<f32>) {
        let demb = self.expander_mut(branch).backward(&trace.mlp, dz);
        self.encoder_mut(branch).backward(&trace.enc, &demb);
    }

    /// Visit every (parameter, gradient) slice pair in a fixed order.
    pub fn visit(&mut self, f: &mut dyn FnMut(String, &mut [f32], &mut [f32])) {
        self.enc_a.visit("a.enc.", f);
        self.exp_a.visit("a.exp.", f);
        if let Some(enc) = &mut self.enc_b {
            enc.visit("b.enc.", f);
        }
        if let Some(exp) = &mut self.exp_b {
            exp.visit("b.exp.", f);
        }
    }

    pub fn visit_ro(&self, f: &mut dyn FnMut(String, &[f32])) {
        self.enc_a.visit_ro("a.enc.", f);
        self.exp_a.visit_ro("a.exp.", f);
        if let Some(enc) = &self.enc_b {
            enc.visit_ro("b.enc.", f);
        }
        if let Some(exp) = &self.exp_b {
            exp.visit_ro("b.exp.", f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_ro(&mut |_, v| n += v.len());
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit(&mut |_, _, g| g.fill(0.0));
    }

    /// SHA-256 over one branch's parameters (encoder then expander, little
    /// endian f32). With shared weights both branches hash the same storage.
    pub fn branch_checksum(&self, branch: Branch) -> [u8; 32] {
        let mut hasher = Sha256::new();
        let mut feed = |_: String, v: &[f32]| {
            for x in v {
                hasher.update(x.to_le_bytes());
            }
        };
        self.encoder(branch).visit_ro("", &mut feed);
        self.expander(branch).visit_ro("", &mut feed);
        let out = hasher.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&out);
        bytes
    }
}
