//! NT-Xent (normalised temperature-scaled cross entropy), the SimCLR
//! objective.
//!
//! The two branch outputs are row-normalised and stacked into `2N` anchors;
//! row `i` of branch a is the positive of row `i` of branch b and vice
//! versa. For anchor `k` with positive `p(k)`:
//!
//! ```text
//! l_k = -log( exp(sim(k, p(k)) / t) / sum_{m != k} exp(sim(k, m) / t) )
//! ```
//!
//! where `sim` is cosine similarity; the loss is the mean of `l_k` over all
//! `2N` anchors, and each denominator runs over the `2N - 1` other rows.

use super::{check_pair, LossBreakdown, LossError};
use ndarray::{concatenate, Array1, Array2, Axis, NdFloat};
use serde::{Deserialize, Serialize};

/// Parameters of the NT-Xent objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NtXentParams {
    /// Softmax temperature `t`.
    pub temperature: f64,
}

impl Default for NtXentParams {
    fn default() -> Self {
        Self { temperature: 0.5 }
    }
}

impl NtXentParams {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(LossError::BadParam {
                name: "temperature",
                value: self.temperature,
            });
        }
        Ok(())
    }
}

/// Row-normalise `z`, returning the unit-row matrix and the row norms.
fn normalize_rows<F: NdFloat>(
    z: &Array2<F>,
    branch: char,
) -> Result<(Array2<F>, Array1<F>), LossError> {
    let mut u = z.clone();
    let mut norms = Array1::<F>::zeros(z.nrows());
    for (row, mut r) in u.rows_mut().into_iter().enumerate() {
        let norm = r.iter().fold(F::zero(), |acc, v| acc + *v * *v).sqrt();
        if norm <= F::zero() {
            return Err(LossError::ZeroNormRow { branch, row });
        }
        r.mapv_inplace(|v| v / norm);
        norms[row] = norm;
    }
    Ok((u, norms))
}

fn nt_xent_impl<F: NdFloat>(
    za: &Array2<F>,
    zb: &Array2<F>,
    params: &NtXentParams,
    with_grad: bool,
) -> Result<(LossBreakdown<F>, Option<(Array2<F>, Array2<F>)>), LossError> {
    check_pair(za, zb, 2)?;
    if !(params.temperature.is_finite() && params.temperature > 0.0) {
        return Err(LossError::BadParam {
            name: "temperature",
            value: params.temperature,
        });
    }
    let n = za.nrows();
    let m2 = 2 * n;
    let t = F::from(params.temperature).expect("temperature fits float type");

    let (ua, norms_a) = normalize_rows(za, 'a')?;
    let (ub, norms_b) = normalize_rows(zb, 'b')?;
    let w = concatenate(Axis(0), &[ua.view(), ub.view()]).expect("same widths");
    let sims = w.dot(&w.t());

    // Row-wise stable log-sum-exp over the off-diagonal entries.
    let mut loss = F::zero();
    let mut soft = Array2::<F>::zeros((m2, m2));
    for k in 0..m2 {
        let pos = (k + n) % m2;
        let mut row_max = F::neg_infinity();
        for m in 0..m2 {
            if m != k && sims[(k, m)] / t > row_max {
                row_max = sims[(k, m)] / t;
            }
        }
        let mut denom = F::zero();
        for m in 0..m2 {
            if m != k {
                let e = ((sims[(k, m)] / t) - row_max).exp();
                soft[(k, m)] = e;
                denom += e;
            }
        }
        let lse = row_max + denom.ln();
        loss += lse - sims[(k, pos)] / t;
        if with_grad {
            for m in 0..m2 {
                soft[(k, m)] /= denom;
            }
        }
    }
    let m2f = F::from(m2 as f64).expect("batch size fits float type");
    loss /= m2f;

    let breakdown = LossBreakdown {
        total: loss,
        components: vec![("contrastive", loss)],
    };
    if !with_grad {
        return Ok((breakdown, None));
    }

    // dL/dS (zero diagonal), then dL/dW = (G + G^T) W.
    let mut g = soft; // softmax values, diagonal already zero
    for k in 0..m2 {
        let pos = (k + n) % m2;
        g[(k, pos)] -= F::one();
    }
    let scale = F::one() / (m2f * t);
    g.mapv_inplace(|v| v * scale);
    let gsym = &g + &g.t();
    let dw = gsym.dot(&w);

    // Back through the row normalisation: u = z / ||z||.
    let mut dza = Array2::<F>::zeros(za.dim());
    let mut dzb = Array2::<F>::zeros(zb.dim());
    for k in 0..m2 {
        let (target, row, norm, u) = if k < n {
            (&mut dza, k, norms_a[k], ua.row(k))
        } else {
            (&mut dzb, k - n, norms_b[k - n], ub.row(k - n))
        };
        let grow = dw.row(k);
        let dot = grow
            .iter()
            .zip(u.iter())
            .fold(F::zero(), |acc, (a, b)| acc + *a * *b);
        for (j, v) in target.row_mut(row).iter_mut().enumerate() {
            *v = (grow[j] - dot * u[j]) / norm;
        }
    }
    Ok((breakdown, Some((dza, dzb))))
}

/// NT-Xent loss.
pub fn nt_xent_loss<F: NdFloat>(
    za: &Array2<F>,
    zb: &Array2<F>,
    params: &NtXentParams,
) -> Result<LossBreakdown<F>, LossError> {
    Ok(nt_xent_impl(za, zb, params, false)?.0)
}

/// NT-Xent loss plus analytic gradients `(dL/dZa, dL/dZb)`.
pub fn nt_xent_loss_grad<F: NdFloat>(
    za: &Array2<F>,
    zb: &Array2<F>,
    params: &NtXentParams,
) -> Result<(LossBreakdown<F>, Array2<F>, Array2<F>), LossError> {
    let (breakdown, grads) = nt_xent_impl(za, zb, params, true)?;
    let (ga, gb) = grads.expect("gradients requested");
    Ok((breakdown, ga, gb))
}
