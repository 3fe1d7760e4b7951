//! Adam optimizer over named flat parameter slices.
//!
//! Works against the `visit` walk that every model type exposes: each call
//! hands (name, parameter slice, gradient slice), and per-name first/second
//! moment buffers live here. β₁ = 0.9, β₂ = 0.999, ε = 1e-8.

use std::collections::BTreeMap;

use crate::model::checkpoint::ArrayEntry;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam state: step counter plus per-parameter moment vectors.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    t: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bias-correction step count so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Begins an optimizer step: advances the step counter. Follow with one
    /// [`Adam::update`] call per parameter (e.g. from inside a `visit`).
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies the Adam update to one named parameter slice in place.
    pub fn update(&mut self, name: &str, lr: f64, param: &mut [f32], grad: &[f32]) {
        debug_assert_eq!(param.len(), grad.len(), "{name}: param/grad length");
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = f64::from(grad[i]);
            let mi = BETA1 * f64::from(m[i]) + (1.0 - BETA1) * g;
            let vi = BETA2 * f64::from(v[i]) + (1.0 - BETA2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + EPS);
            param[i] = (f64::from(param[i]) - update) as f32;
        }
    }

    /// Serializes the moment buffers as checkpoint arrays
    /// (`adam.m.<name>` / `adam.v.<name>`).
    pub fn to_arrays(&self) -> Vec<ArrayEntry> {
        let mut out = Vec::new();
        for (name, (m, v)) in &self.moments {
            out.push(ArrayEntry::flat(format!("adam.m.{name}"), m.clone()));
            out.push(ArrayEntry::flat(format!("adam.v.{name}"), v.clone()));
        }
        out
    }

    /// Rebuilds state from checkpoint arrays produced by [`Adam::to_arrays`].
    pub fn from_arrays(t: u64, arrays: &[ArrayEntry]) -> Self {
        let mut moments: BTreeMap<String, (Vec<f32>, Vec<f32>)> = BTreeMap::new();
        for a in arrays {
            if let Some(name) = a.name.strip_prefix("adam.m.") {
                moments.entry(name.to_string()).or_default().0 = a.data.clone();
            } else if let Some(name) = a.name.strip_prefix("adam.v.") {
                moments.entry(name.to_string()).or_default().1 = a.data.clone();
            }
        }
        Self { t, moments }
    }
}
