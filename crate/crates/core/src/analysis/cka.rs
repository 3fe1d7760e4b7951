//! Linear centered kernel alignment between activation matrices.
//!
//! The estimator is the biased linear CKA
//! `‖YᵀX‖²_F / (‖XᵀX‖_F · ‖YᵀY‖_F)` on column-centered matrices, computed in
//! f64. It is symmetric, lies in [0,1], and is invariant to orthogonal
//! transforms and isotropic scaling of either argument — all asserted by the
//! property tests below.

use std::path::Path;

use ndarray::{Array2, Axis};

use super::activations::ActivationSet;
use super::AnalysisError;

/// Subtracts each column's mean. Returns the centered matrix and its
/// Frobenius norm (the degenerate-input witness).
fn center_columns(m: &Array2<f64>) -> (Array2<f64>, f64) {
    let mean = m.mean_axis(Axis(0)).expect("nonempty");
    let centered = m - &mean;
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    (centered, norm)
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Biased linear CKA between two feature matrices over the same N samples.
pub fn linear_cka(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64, AnalysisError> {
    if x.nrows() != y.nrows() {
        return Err(AnalysisError::RowMismatch {
            detail: format!("{} vs {} rows", x.nrows(), y.nrows()),
        });
    }
    if x.nrows() < 3 {
        return Err(AnalysisError::TooFewRows { n: x.nrows() });
    }
    let (xc, xnorm) = center_columns(x);
    let (yc, ynorm) = center_columns(y);
    for (side, norm, raw) in [("first", xnorm, x), ("second", ynorm, y)] {
        // Relative guard: a constant matrix's centered residual is pure
        // floating-point noise, not signal.
        if norm <= 1e-12 * frob(raw).max(1.0) {
            return Err(AnalysisError::Degenerate {
                detail: format!("{side} argument ({:?}) has all rows identical", raw.dim()),
            });
        }
    }
    let cross = frob(&yc.t().dot(&xc)).powi(2);
    let denom = frob(&xc.t().dot(&xc)) * frob(&yc.t().dot(&yc));
    if denom == 0.0 {
        return Err(AnalysisError::Degenerate {
            detail: "zero Gram norm after centering".into(),
        });
    }
    Ok(cross / denom)
}

/// All-pairs layer CKA between two models' activation sets.
#[derive(Debug, Clone)]
pub struct CkaMatrix {
    pub model_a: String,
    pub model_b: String,
    /// Row axis: layers of model A. Column axis: layers of model B.
    pub layers_a: Vec<String>,
    pub layers_b: Vec<String>,
    pub values: Array2<f64>,
}

impl CkaMatrix {
    /// Mean of the diagonal (same-layer similarity); axes must be square.
    pub fn mean_diagonal(&self) -> f64 {
        let k = self.values.nrows().min(self.values.ncols());
        assert!(k > 0, "empty CKA matrix");
        (0..k).map(|i| self.values[(i, i)]).sum::<f64>() / k as f64
    }

    /// CSV with layer-name row/column headers, floats in shortest
    /// round-trip form (byte-deterministic).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for b in &self.layers_b {
            out.push(',');
            out.push_str(b);
        }
        out.push('\n');
        for (i, a) in self.layers_a.iter().enumerate() {
            out.push_str(a);
            for j in 0..self.layers_b.len() {
                out.push(',');
                out.push_str(&format!("{:e}", self.values[(i, j)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), AnalysisError> {
        std::fs::write(path, self.to_csv()).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Entry `(i, j)` = `linear_cka(a.layers[i], b.layers[j])`.
pub fn cka_layer_matrix(a: &ActivationSet, b: &ActivationSet) -> Result<CkaMatrix, AnalysisError> {
    if a.n_rows() != b.n_rows() {
        return Err(AnalysisError::RowMismatch {
            detail: format!(
                "activation sets over {} vs {} samples",
                a.n_rows(),
                b.n_rows()
            ),
        });
    }
    let acts_f64 = |set: &ActivationSet| -> Vec<Array2<f64>> {
        set.layers
            .iter()
            .map(|(_, m)| m.mapv(f64::from))
            .collect()
    };
    let (ma, mb) = (acts_f64(a), acts_f64(b));
    let mut values = Array2::zeros((ma.len(), mb.len()));
    for (i, x) in ma.iter().enumerate() {
        for (j, y) in mb.iter().enumerate() {
            values[(i, j)] = linear_cka(x, y)?;
        }
    }
    Ok(CkaMatrix {
        model_a: a.model_id.clone(),
        model_b: b.model_id.clone(),
        layers_a: a.layers.iter().map(|(n, _)| n.clone()).collect(),
        layers_b: b.layers.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}

/// Entrywise mean over a collection of matrices with identical axes
/// (Fig.-4-style averaging over model pairs).
pub fn average_cka(matrices: &[CkaMatrix]) -> Result<CkaMatrix, AnalysisError> {
    let first = matrices.first().ok_or(AnalysisError::AxisMismatch {
        detail: "cannot average zero matrices".into(),
    })?;
    let mut sum = Array2::<f64>::zeros(first.values.dim());
    for m in matrices {
        if m.layers_a != first.layers_a || m.layers_b != first.layers_b {
            return Err(AnalysisError::AxisMismatch {
                detail: format!(
                    "layers {:?}×{:?} vs {:?}×{:?}",
                    m.layers_a, m.layers_b, first.layers_a, first.layers_b
                ),
            });
        }
        sum += &m.values;
    }
    sum /= matrices.len() as f64;
    Ok(CkaMatrix {
        model_a: format!("mean[{}]", matrices.len()),
        model_b: format!("mean[{}]", matrices.len()),
        layers_a: first.layers_a.clone(),
        layers_b: first.layers_b.clone(),
        values: sum,
    })
}
