//! Joint-embedding objectives with analytic gradients.
//!
//! Both losses consume the two branches' *expander* outputs as `(N, D)`
//! matrices (N = batch size) and return a [`LossBreakdown`] plus the
//! gradient of the total loss with respect to each input matrix. Gradients
//! are derived by hand and cross-checked in the tests against central
//! finite differences in f64.
//!
//! The functions are generic over the float type: training uses `f32`,
//! gradient verification uses `f64`.

mod ntxent;
mod vicreg;

pub use ntxent::{nt_xent_loss, nt_xent_loss_grad, NtXentParams};
pub use vicreg::{vicreg_loss, vicreg_loss_grad, VicregParams};

use ndarray::{Array2, NdFloat};
use thiserror::Error;

/// Errors raised by loss evaluation.
#[derive(Debug, Error)]
pub enum LossError {
    #[error("embedding shape mismatch: branch a is {a:?}, branch b is {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("batch of {n} rows is too small for this loss (needs at least {min})")]
    BatchTooSmall { n: usize, min: usize },
    #[error("embeddings contain a non-finite value (branch {branch}, row {row})")]
    NonFinite { branch: char, row: usize },
    #[error("row {row} of branch {branch} has zero norm; cosine similarity undefined")]
    ZeroNormRow { branch: char, row: usize },
    #[error("invalid loss parameter {name} = {value}")]
    BadParam { name: &'static str, value: f64 },
}

/// A scalar loss value together with its per-term decomposition.
///
/// Components are stored *unweighted*; the weighted sum (weights taken from
/// the loss parameters) reproduces `total`. Component order is fixed so
/// that metrics files have stable columns.
#[derive(Debug, Clone)]
pub struct LossBreakdown<F> {
    pub total: F,
    pub components: Vec<(&'static str, F)>,
}

impl<F: NdFloat> LossBreakdown<F> {
    /// Look up one component by name.
    pub fn component(&self, name: &str) -> Option<F> {
        self.components
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
    }
}

fn check_pair<F: NdFloat>(za: &Array2<F>, zb: &Array2<F>, min_n: usize) -> Result<(), LossError> {
    if za.dim() != zb.dim() {
        return Err(LossError::ShapeMismatch {
            a: za.dim(),
            b: zb.dim(),
        });
    }
    if za.nrows() < min_n {
        return Err(LossError::BatchTooSmall {
            n: za.nrows(),
            min: min_n,
        });
    }
    for (branch, z) in [('a', za), ('b', zb)] {
        for (row, r) in z.rows().into_iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(LossError::NonFinite { branch, row });
            }
        }
    }
    Ok(())
}

/// Central-difference gradient of `f` with respect to both of its matrix
/// arguments. Intended for verifying analytic gradients; always f64.
///
/// Each coordinate is perturbed by `±h` in turn, so `f` is evaluated
/// `2 * (len(za) + len(zb))` times.
pub fn numeric_gradient<LF>(
    f: LF,
    za: &Array2<f64>,
    zb: &Array2<f64>,
    h: f64,
) -> (Array2<f64>, Array2<f64>)
where
    LF: Fn(&Array2<f64>, &Array2<f64>) -> f64,
{
    let grad_of = |which: usize| {
        let base = if which == 0 { za } else { zb };
        let mut g = Array2::<f64>::zeros(base.dim());
        for idx in 0..base.len() {
            let (r, c) = (idx / base.ncols(), idx % base.ncols());
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[(r, c)] += h;
            minus[(r, c)] -= h;
            let (fp, fm) = if which == 0 {
                (f(&plus, zb), f(&minus, zb))
            } else {
                (f(za, &plus), f(za, &minus))
            };
            g[(r, c)] = (fp - fm) / (2.0 * h);
        }
        g
    };
    (grad_of(0), grad_of(1))
}

/// Relative error between an analytic and a numeric gradient coordinate,
/// with a small floor on the denominator so exact zeros do not blow up.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-3, f64::max(a.abs(), b.abs()))
}

/// Largest coordinate-wise [`relative_error`] between two gradient matrices.
pub fn max_relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn numeric_gradient_matches_simple_quadratic() {
        // f(A, B) = sum(A^2) + 3 * sum(A * B); gradients are 2A + 3B and 3A.
        let za = array![[1.0, -2.0], [0.5, 4.0]];
        let zb = array![[2.0, 1.0], [-1.0, 0.25]];
        let f = |a: &Array2<f64>, b: &Array2<f64>| {
            a.mapv(|v| v * v).sum() + 3.0 * (a * b).sum()
        };
        let (ga, gb) = numeric_gradient(f, &za, &zb, 1e-5);
        let expect_a = &za * 2.0 + &zb * 3.0;
        let expect_b = &za * 3.0;
        assert!(max_relative_error(&expect_a, &ga) < 1e-8);
        assert!(max_relative_error(&expect_b, &gb) < 1e-8);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let za = Array2::<f32>::zeros((4, 3));
        let zb = Array2::<f32>::zeros((4, 2));
        let err = check_pair(&za, &zb, 2).unwrap_err();
        assert!(matches!(err, LossError::ShapeMismatch { .. }));
    }

    #[test]
    fn tiny_batch_is_rejected() {
        let za = Array2::<f32>::zeros((1, 3));
        let zb = Array2::<f32>::zeros((1, 3));
        let err = check_pair(&za, &zb, 2).unwrap_err();
        assert!(matches!(err, LossError::BatchTooSmall { n: 1, min: 2 }));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut za = Array2::<f32>::zeros((2, 3));
        za[(1, 2)] = f32::NAN;
        let zb = Array2::<f32>::zeros((2, 3));
        let err = check_pair(&za, &zb, 2).unwrap_err();
        assert!(matches!(err, LossError::NonFinite { branch: 'a', row: 1 }));
    }
}
