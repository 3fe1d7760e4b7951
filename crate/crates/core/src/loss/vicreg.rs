//! VICReg: variance / invariance / covariance regularisation.
//!
//! For branch outputs `Za`, `Zb` of shape `(N, D)` the total loss is
//!
//! ```text
//! L = lambda * inv(Za, Zb) + mu * (var(Za) + var(Zb)) + nu * (cov(Za) + cov(Zb))
//! ```
//!
//! * `inv`  — mean squared Euclidean distance between paired rows,
//!   `(1/N) * sum_i ||za_i - zb_i||^2`.
//! * `var`  — hinge on the per-dimension standard deviation,
//!   `(1/D) * sum_j max(0, gamma - sqrt(Var(Z[:, j]) + eps))`, with the
//!   unbiased column variance (denominator `N - 1`) and `eps` inside the
//!   square root.
//! * `cov`  — mean squared off-diagonal of the `D x D` sample covariance
//!   `C = (1/(N-1)) * Zc^T Zc` (`Zc` column-centred):
//!   `(1/D) * sum_{i != j} C_ij^2`.

use super::{check_pair, LossBreakdown, LossError};
use ndarray::{Array2, Axis, NdFloat};
use serde::{Deserialize, Serialize};

/// Weights and constants of the VICReg objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VicregParams {
    /// Weight of the invariance term.
    pub lambda: f64,
    /// Weight of the variance (hinge) terms.
    pub mu: f64,
    /// Weight of the covariance terms.
    pub nu: f64,
    /// Target standard deviation in the hinge.
    pub gamma: f64,
    /// Stabiliser added to the variance inside the square root.
    pub eps: f64,
}

impl Default for VicregParams {
    fn default() -> Self {
        Self {
            lambda: 25.0,
            mu: 25.0,
            nu: 1.0,
            gamma: 1.0,
            eps: 1e-4,
        }
    }
}

impl VicregParams {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("nu", self.nu),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(LossError::BadParam { name, value });
            }
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(LossError::BadParam {
                name: "gamma",
                value: self.gamma,
            });
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(LossError::BadParam {
                name: "eps",
                value: self.eps,
            });
        }
        Ok(())
    }
}

fn cast<F: NdFloat>(v: f64) -> F {
    F::from(v).expect("f64 fits in the target float type")
}

/// Variance hinge term and its gradient for one branch.
fn variance_term<F: NdFloat>(z: &Array2<F>, gamma: F, eps: F) -> (F, Array2<F>) {
    let (n, d) = z.dim();
    let nf = cast::<F>(n as f64);
    let df = cast::<F>(d as f64);
    let mean = z.sum_axis(Axis(0)) / nf;
    let centered = z - &mean;
    let mut term = F::zero();
    let mut grad = Array2::<F>::zeros((n, d));
    for j in 0..d {
        let col = centered.column(j);
        let var = col.mapv(|v| v * v).sum() / (nf - F::one());
        let s = (var + eps).sqrt();
        let hinge = gamma - s;
        if hinge > F::zero() {
            term += hinge;
            // d/dz_ij of -(1/D) * sqrt(Var_j + eps)
            let scale = -(F::one() / (df * s * (nf - F::one())));
            for i in 0..n {
                grad[(i, j)] = centered[(i, j)] * scale;
            }
        }
    }
    (term / df, grad)
}

/// Off-diagonal covariance term and its gradient for one branch.
fn covariance_term<F: NdFloat>(z: &Array2<F>) -> (F, Array2<F>) {
    let (n, d) = z.dim();
    let nf = cast::<F>(n as f64);
    let df = cast::<F>(d as f64);
    let mean = z.sum_axis(Axis(0)) / nf;
    let centered = z - &mean;
    let mut cov = centered.t().dot(&centered) / (nf - F::one());
    let mut term = F::zero();
    for i in 0..d {
        cov[(i, i)] = F::zero();
    }
    for v in cov.iter() {
        term += *v * *v;
    }
    term /= df;
    // Column sums of `centered` vanish, so centring needs no extra correction.
    let grad = centered.dot(&cov) * (cast::<F>(4.0) / (df * (nf - F::one())));
    (term, grad)
}

fn vicreg_impl<F: NdFloat>(
    za: &Array2<F>,
    zb: &Array2<F>,
    params: &VicregParams,
    with_grad: bool,
) -> Result<(LossBreakdown<F>, Option<(Array2<F>, Array2<F>)>), LossError> {
    check_pair(za, zb, 2)?;
    params.validate()?;
    let n = cast::<F>(za.nrows() as f64);
    let (lambda, mu, nu) = (
        cast::<F>(params.lambda),
        cast::<F>(params.mu),
        cast::<F>(params.nu),
    );
    let gamma = cast::<F>(params.gamma);
    let eps = cast::<F>(params.eps);

    let diff = za - zb;
    let inv = diff.mapv(|v| v * v).sum() / n;
    let (var_a, gvar_a) = variance_term(za, gamma, eps);
    let (var_b, gvar_b) = variance_term(zb, gamma, eps);
    let (cov_a, gcov_a) = covariance_term(za);
    let (cov_b, gcov_b) = covariance_term(zb);

    let total = lambda * inv + mu * (var_a + var_b) + nu * (cov_a + cov_b);
    let breakdown = LossBreakdown {
        total,
        components: vec![
            ("invariance", inv),
            ("variance_a", var_a),
            ("variance_b", var_b),
            ("covariance_a", cov_a),
            ("covariance_b", cov_b),
        ],
    };
    let grads = if with_grad {
        let inv_scale = lambda * cast::<F>(2.0) / n;
        let mut ga = gvar_a.mapv(|v| v * mu);
        ga.zip_mut_with(&gcov_a, |g, &c| *g += c * nu);
        ga.zip_mut_with(&diff, |g, &d| *g += d * inv_scale);
        let mut gb = gvar_b.mapv(|v| v * mu);
        gb.zip_mut_with(&gcov_b, |g, &c| *g += c * nu);
        gb.zip_mut_with(&diff, |g, &d| *g -= d * inv_scale);
        Some((ga, gb))
    } else {
        None
    };
    Ok((breakdown, grads))
}

/// VICReg loss with per-term breakdown.
pub fn vicreg_loss<F: NdFloat>(
    za: &Array2<F>,
    zb: &Array2<F>,
    params: &VicregParams,
) -> Result<LossBreakdown<F>, LossError> {
    Ok(vicreg_impl(za, zb, params, false)?.0)
}

/// VICReg loss plus analytic gradients `(dL/dZa, dL/dZb)`.
pub fn vicreg_loss_grad<F: NdFloat>(
    za: &Array2<F>,
    zb: &Array2<F>,
    params: &VicregParams,
) -> Result<(LossBreakdown<F>, Array2<F>, Array2<F>), LossError> {
    let (breakdown, grads) = vicreg_impl(za, zb, params, true)?;
    let (ga, gb) = grads.expect("gradients requested");
    Ok((breakdown, ga, gb))
}
