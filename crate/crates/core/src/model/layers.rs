//! Minimal CPU layer zoo with hand-written backward passes.
//!
//! Layers are parameterised over the float type: the training path runs in
//! `f32`, while the gradient tests instantiate `f64` and compare against
//! central finite differences.
//!
//! Forward passes come in two flavours: `forward` for inference, and
//! `forward_t` which additionally returns a *trace* owning every cached
//! intermediate needed by `backward`. Keeping the trace outside the layer
//! lets one parameter set serve several concurrent passes (weight-shared
//! branches run forward twice, then backward twice, accumulating into the
//! same gradient buffers).

use ndarray::{Array1, Array2, Array4, Axis, NdFloat};
use rand::Rng;

pub(crate) fn fl<F: NdFloat>(v: f64) -> F {
    F::from(v).expect("constant representable in float type")
}

/// Spatial output size of a `k`-kernel convolution/pool with stride `s`
/// and symmetric zero padding `p`.
pub fn conv_out_len(input: usize, k: usize, s: usize, p: usize) -> usize {
    (input + 2 * p - k) / s + 1
}

fn he_uniform<F: NdFloat, R: Rng>(rng: &mut R, fan_in: usize) -> F {
    let limit = (6.0 / fan_in as f64).sqrt();
    fl(rng.gen_range(-limit..limit))
}

// ── Convolution ──────────────────────────────────────────────────────────

/// 2-D convolution, stored in GEMM form: `weight` is `(C*K*K, OC)` with the
/// input-patch axis ordered `(channel, ky, kx)`.
pub struct Conv2d<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub grad_weight: Array2<F>,
    pub grad_bias: Array1<F>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Cached intermediates of one conv forward pass.
pub struct ConvTrace<F> {
    cols: Array2<F>,
    in_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<F: NdFloat> Conv2d<F> {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let weight = Array2::from_shape_fn((fan_in, out_ch), |_| he_uniform(rng, fan_in));
        Self {
            weight,
            bias: Array1::zeros(out_ch),
            grad_weight: Array2::zeros((fan_in, out_ch)),
            grad_bias: Array1::zeros(out_ch),
            in_ch,
            out_ch,
            k,
            stride,
            pad,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn im2col(&self, x: &Array4<F>) -> (Array2<F>, (usize, usize)) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "input channel mismatch");
        let oh = conv_out_len(h, self.k, self.stride, self.pad);
        let ow = conv_out_len(w, self.k, self.stride, self.pad);
        let row_len = c * self.k * self.k;
        let mut cols = Array2::<F>::zeros((n * oh * ow, row_len));
        let xs = x.as_slice().expect("standard layout input");
        let cs = cols.as_slice_mut().expect("fresh array is contiguous");
        for ni in 0..n {
            for oy in 0..oh {
                let iy0 = (oy * self.stride) as isize - self.pad as isize;
                for ox in 0..ow {
                    let ix0 = (ox * self.stride) as isize - self.pad as isize;
                    let row = ((ni * oh + oy) * ow + ox) * row_len;
                    for ci in 0..c {
                        for ky in 0..self.k {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_base = ((ni * c + ci) * h + iy as usize) * w;
                            let col_base = row + (ci * self.k + ky) * self.k;
                            for kx in 0..self.k {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                cs[col_base + kx] = xs[x_base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        (cols, (oh, ow))
    }

    fn col2im(&self, dcols: &Array2<F>, in_dim: (usize, usize, usize, usize)) -> Array4<F> {
        let (n, c, h, w) = in_dim;
        let oh = conv_out_len(h, self.k, self.stride, self.pad);
        let ow = conv_out_len(w, self.k, self.stride, self.pad);
        let row_len = c * self.k * self.k;
        let mut dx = Array4::<F>::zeros(in_dim);
        let ds = dcols.as_slice().expect("standard layout gradient");
        let xs = dx.as_slice_mut().expect("fresh array is contiguous");
        for ni in 0..n {
            for oy in 0..oh {
                let iy0 = (oy * self.stride) as isize - self.pad as isize;
                for ox in 0..ow {
                    let ix0 = (ox * self.stride) as isize - self.pad as isize;
                    let row = ((ni * oh + oy) * ow + ox) * row_len;
                    for ci in 0..c {
                        for ky in 0..self.k {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_base = ((ni * c + ci) * h + iy as usize) * w;
                            let col_base = row + (ci * self.k + ky) * self.k;
                            for kx in 0..self.k {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                xs[x_base + ix as usize] += ds[col_base + kx];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn out_from_cols(&self, cols: &Array2<F>, n: usize, oh: usize, ow: usize) -> Array4<F> {
        let mut out_mat = cols.dot(&self.weight);
        out_mat += &self.bias;
        let out = out_mat
            .into_shape_with_order((n, oh, ow, self.out_ch))
            .expect("row count matches")
            .permuted_axes([0, 3, 1, 2]);
        out.as_standard_layout().into_owned()
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let n = x.dim().0;
        let (cols, (oh, ow)) = self.im2col(x);
        self.out_from_cols(&cols, n, oh, ow)
    }

    pub fn forward_t(&self, x: &Array4<F>) -> (Array4<F>, ConvTrace<F>) {
        let n = x.dim().0;
        let (cols, (oh, ow)) = self.im2col(x);
        let out = self.out_from_cols(&cols, n, oh, ow);
        (
            out,
            ConvTrace {
                cols,
                in_dim: x.dim(),
                out_hw: (oh, ow),
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, trace: &ConvTrace<F>, dy: &Array4<F>) -> Array4<F> {
        let (n, oc, oh, ow) = dy.dim();
        assert_eq!((oh, ow), trace.out_hw, "gradient spatial shape mismatch");
        assert_eq!(oc, self.out_ch);
        let dy_mat = dy
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * oh * ow, oc))
            .expect("contiguous");
        self.grad_weight += &trace.cols.t().dot(&dy_mat);
        self.grad_bias += &dy_mat.sum_axis(Axis(0));
        let dcols = dy_mat.dot(&self.weight.t());
        self.col2im(&dcols, trace.in_dim)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [F], &mut [F])) {
        f(
            format!("{prefix}.weight"),
            self.weight.as_slice_mut().expect("contiguous"),
            self.grad_weight.as_slice_mut().expect("contiguous"),
        );
        f(
            format!("{prefix}.bias"),
            self.bias.as_slice_mut().expect("contiguous"),
            self.grad_bias.as_slice_mut().expect("contiguous"),
        );
    }

    pub fn visit_ro(&self, prefix: &str, f: &mut dyn FnMut(String, &[F])) {
        f(
            format!("{prefix}.weight"),
            self.weight.as_slice().expect("contiguous"),
        );
        f(
            format!("{prefix}.bias"),
            self.bias.as_slice().expect("contiguous"),
        );
    }
}

// ── Dense ────────────────────────────────────────────────────────────────

/// Fully connected layer, `y = x W + b` with `weight: (in, out)`.
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub grad_weight: Array2<F>,
    pub grad_bias: Array1<F>,
}

pub struct DenseTrace<F> {
    input: Array2<F>,
}

impl<F: NdFloat> Dense<F> {
    pub fn new<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        let weight = Array2::from_shape_fn((in_dim, out_dim), |_| he_uniform(rng, in_dim));
        Self {
            weight,
            bias: Array1::zeros(out_dim),
            grad_weight: Array2::zeros((in_dim, out_dim)),
            grad_bias: Array1::zeros(out_dim),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    pub fn forward_t(&self, x: &Array2<F>) -> (Array2<F>, DenseTrace<F>) {
        (self.forward(x), DenseTrace { input: x.clone() })
    }

    pub fn backward(&mut self, trace: &DenseTrace<F>, dy: &Array2<F>) -> Array2<F> {
        self.grad_weight += &trace.input.t().dot(dy);
        self.grad_bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [F], &mut [F])) {
        f(
            format!("{prefix}.weight"),
            self.weight.as_slice_mut().expect("contiguous"),
            self.grad_weight.as_slice_mut().expect("contiguous"),
        );
        f(
            format!("{prefix}.bias"),
            self.bias.as_slice_mut().expect("contiguous"),
            self.grad_bias.as_slice_mut().expect("contiguous"),
        );
    }

    pub fn visit_ro(&self, prefix: &str, f: &mut dyn FnMut(String, &[F])) {
        f(
            format!("{prefix}.weight"),
            self.weight.as_slice().expect("contiguous"),
        );
        f(
            format!("{prefix}.bias"),
            self.bias.as_slice().expect("contiguous"),
        );
    }
}

// ── Stateless pieces ─────────────────────────────────────────────────────

pub fn relu4<F: NdFloat>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu4_backward<F: NdFloat>(out: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(out, |g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
    dx
}

pub fn relu2<F: NdFloat>(x: &Array2<F>) -> Array2<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu2_backward<F: NdFloat>(out: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(out, |g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
    dx
}

/// Global average pooling `(N, C, H, W) -> (N, C)`.
pub fn gap_forward<F: NdFloat>(x: &Array4<F>) -> Array2<F> {
    let (_, _, h, w) = x.dim();
    let scale = F::one() / fl::<F>((h * w) as f64);
    x.sum_axis(Axis(3)).sum_axis(Axis(2)) * scale
}

pub fn gap_backward<F: NdFloat>(dy: &Array2<F>, hw: (usize, usize)) -> Array4<F> {
    let (n, c) = dy.dim();
    let (h, w) = hw;
    let scale = F::one() / fl::<F>((h * w) as f64);
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let g = dy[(ni, ci)] * scale;
            dx.index_axis_mut(Axis(0), ni)
                .index_axis_mut(Axis(0), ci)
                .fill(g);
        }
    }
    dx
}

// ── Max pooling (used by the ResNet-shaped encoder) ──────────────────────

pub struct MaxPoolTrace {
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

/// 2-D max pooling; ties resolve to the first maximum in scan order.
pub fn maxpool_forward_t<F: NdFloat>(
    x: &Array4<F>,
    k: usize,
    s: usize,
    p: usize,
) -> (Array4<F>, MaxPoolTrace) {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_len(h, k, s, p);
    let ow = conv_out_len(w, k, s, p);
    let mut out = Array4::<F>::zeros((n, c, oh, ow));
    let mut argmax = vec![0usize; n * c * oh * ow];
    let xs = x.as_slice().expect("standard layout input");
    for ni in 0..n {
        for ci in 0..c {
            let plane = ((ni * c) + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0usize;
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = plane + iy as usize * w + ix as usize;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[(ni, ci, oy, ox)] = best;
                    argmax[((ni * c + ci) * oh + oy) * ow + ox] = best_idx;
                }
            }
        }
    }
    (
        out,
        MaxPoolTrace {
            argmax,
            in_dim: (n, c, h, w),
            out_hw: (oh, ow),
        },
    )
}

pub fn maxpool_backward<F: NdFloat>(trace: &MaxPoolTrace, dy: &Array4<F>) -> Array4<F> {
    let (n, c, oh, ow) = dy.dim();
    assert_eq!((oh, ow), trace.out_hw);
    let mut dx = Array4::<F>::zeros(trace.in_dim);
    let dxs = dx.as_slice_mut().expect("fresh array is contiguous");
    let dys = dy.as_slice().expect("standard layout gradient");
    for (flat, &src) in trace.argmax.iter().enumerate() {
        dxs[src] += dys[flat];
    }
    let _ = (n, c);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand4(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct sliding-window convolution used as the oracle.
    fn naive_conv(x: &Array4<f64>, conv: &Conv2d<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (k, s, p) = (conv.k, conv.stride, conv.pad);
        let oh = conv_out_len(h, k, s, p);
        let ow = conv_out_len(w, k, s, p);
        let mut out = Array4::<f64>::zeros((n, conv.out_ch, oh, ow));
        for ni in 0..n {
            for oc in 0..conv.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias[oc];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize
                                    {
                                        continue;
                                    }
                                    let wv =
                                        conv.weight[((ci * k + ky) * k + kx, oc)];
                                    acc += wv * x[(ni, ci, iy as usize, ix as usize)];
                                }
                            }
                        }
                        out[(ni, oc, oy, ox)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_output_sizes() {
        assert_eq!(conv_out_len(64, 3, 2, 1), 32);
        assert_eq!(conv_out_len(64, 7, 2, 3), 32);
        assert_eq!(conv_out_len(32, 3, 2, 1), 16);
        assert_eq!(conv_out_len(7, 1, 1, 0), 7);
    }

    #[test]
    fn conv_forward_matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, pad, h) in [(2usize, 1usize, 9usize), (1, 1, 6), (2, 3, 8)] {
            let k = if pad == 3 { 7 } else { 3 };
            let conv = Conv2d::<f64>::new(&mut rng, 2, 3, k, stride, pad);
            let x = rand4(&mut rng, (2, 2, h, h));
            let got = conv.forward(&x);
            let want = naive_conv(&x, &conv);
            let err = (&got - &want).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
            assert!(err < 1e-12, "stride {stride} pad {pad}: max err {err}");
        }
    }

    /// Finite-difference check of a scalar functional of the conv output
    /// with respect to input, weight and bias.
    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut conv = Conv2d::<f64>::new(&mut rng, 2, 3, 3, 2, 1);
        let x = rand4(&mut rng, (2, 2, 5, 5));
        let probe = rand4(&mut rng, (2, 3, 3, 3)); // fixed projection: f = sum(out * probe)

        let (out, trace) = conv.forward_t(&x);
        assert_eq!(out.dim(), (2, 3, 3, 3));
        let dx = conv.backward(&trace, &probe);

        let h = 1e-6;
        let f = |c: &Conv2d<f64>, x: &Array4<f64>| (&c.forward(x) * &probe).sum();
        // input gradient
        for idx in [(0, 0, 0, 0), (1, 1, 4, 3), (0, 1, 2, 2)] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let num = (f(&conv, &xp) - f(&conv, &xm)) / (2.0 * h);
            assert!((dx[idx] - num).abs() < 1e-6, "dx at {idx:?}: {} vs {num}", dx[idx]);
        }
        // weight gradient
        for idx in [(0, 0), (17, 2), (9, 1)] {
            let mut cp = Conv2d::<f64> {
                weight: conv.weight.clone(),
                bias: conv.bias.clone(),
                grad_weight: Array2::zeros(conv.grad_weight.dim()),
                grad_bias: ndarray::Array1::zeros(conv.grad_bias.dim()),
                ..Conv2d::<f64>::new(&mut ChaCha8Rng::seed_from_u64(0), 2, 3, 3, 2, 1)
            };
            cp.weight[idx] += h;
            let fp = f(&cp, &x);
            cp.weight[idx] -= 2.0 * h;
            let fm = f(&cp, &x);
            let num = (fp - fm) / (2.0 * h);
            assert!(
                (conv.grad_weight[idx] - num).abs() < 1e-6,
                "dw at {idx:?}: {} vs {num}",
                conv.grad_weight[idx]
            );
        }
        // bias gradient: d f / d b_oc = sum of probe over (n, oh, ow)
        for oc in 0..3 {
            let want = probe.index_axis(Axis(1), oc).sum();
            assert!((conv.grad_bias[oc] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_backward_accumulates_across_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(&mut rng, 1, 2, 3, 1, 1);
        let x = rand4(&mut rng, (1, 1, 4, 4));
        let dy = rand4(&mut rng, (1, 2, 4, 4));
        let (_, trace) = conv.forward_t(&x);
        conv.backward(&trace, &dy);
        let once = conv.grad_weight.clone();
        conv.backward(&trace, &dy);
        let twice = conv.grad_weight.clone();
        let err = (&twice - &(&once * 2.0)).mapv(f64::abs).sum();
        assert!(err < 1e-12);
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut dense = Dense::<f64>::new(&mut rng, 4, 3);
        let x = Array2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0..1.0));
        let probe = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let (_, trace) = dense.forward_t(&x);
        let dx = dense.backward(&trace, &probe);

        let h = 1e-6;
        let f = |d: &Dense<f64>, x: &Array2<f64>| (&d.forward(x) * &probe).sum();
        for idx in [(0, 0), (4, 3 - 1), (2, 1)] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let num = (f(&dense, &xp) - f(&dense, &xm)) / (2.0 * h);
            assert!((dx[idx] - num).abs() < 1e-6);
        }
        for idx in [(0, 0), (3, 2), (1, 1)] {
            let mut dp = Dense::<f64>::new(&mut ChaCha8Rng::seed_from_u64(0), 4, 3);
            dp.weight = dense.weight.clone();
            dp.bias = dense.bias.clone();
            dp.weight[idx] += h;
            let fp = f(&dp, &x);
            dp.weight[idx] -= 2.0 * h;
            let fm = f(&dp, &x);
            let num = (fp - fm) / (2.0 * h);
            assert!((dense.grad_weight[idx] - num).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_zeroes_gradient_where_inactive() {
        let x = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, -2.0, 0.0, 3.0]).unwrap();
        let y = relu4(&x);
        assert_eq!(y.as_slice().unwrap(), &[1.0, 0.0, 0.0, 3.0]);
        let dy = Array4::from_elem((1, 1, 2, 2), 1.0);
        let dx = relu4_backward(&y, &dy);
        assert_eq!(dx.as_slice().unwrap(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn gap_is_mean_and_backward_spreads_evenly() {
        let x = Array4::from_shape_vec((1, 2, 2, 2), vec![1., 2., 3., 4., 5., 6., 7., 8.])
            .unwrap();
        let y = gap_forward(&x);
        assert_eq!(y[(0, 0)], 2.5);
        assert_eq!(y[(0, 1)], 6.5);
        let dy = Array2::from_shape_vec((1, 2), vec![4.0, 8.0]).unwrap();
        let dx = gap_backward(&dy, (2, 2));
        assert_eq!(dx[(0, 0, 1, 1)], 1.0);
        assert_eq!(dx[(0, 1, 0, 0)], 2.0);
    }

    #[test]
    fn maxpool_forward_and_backward_route_through_argmax() {
        let x = Array4::from_shape_vec(
            (1, 1, 4, 4),
            vec![
                1., 2., 3., 4., //
                5., 6., 7., 8., //
                9., 10., 11., 12., //
                13., 14., 15., 16.,
            ],
        )
        .unwrap();
        let (y, trace) = maxpool_forward_t(&x, 3, 2, 1);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[(0, 0, 0, 0)], 6.0);
        assert_eq!(y[(0, 0, 1, 1)], 16.0);
        let dy = Array4::from_elem((1, 1, 2, 2), 1.0);
        let dx = maxpool_backward(&trace, &dy);
        assert_eq!(dx[(0, 0, 1, 1)], 1.0); // the 6
        assert_eq!(dx[(0, 0, 3, 3)], 1.0); // the 16
        assert_eq!(dx.sum(), 4.0);
    }

    #[test]
    fn init_is_seed_deterministic_and_fan_in_bounded() {
        let a = Conv2d::<f32>::new(&mut ChaCha8Rng::seed_from_u64(5), 3, 8, 3, 2, 1);
        let b = Conv2d::<f32>::new(&mut ChaCha8Rng::seed_from_u64(5), 3, 8, 3, 2, 1);
        assert_eq!(a.weight, b.weight);
        let limit = (6.0f32 / 27.0).sqrt();
        assert!(a.weight.iter().all(|v| v.abs() < limit));
        assert!(a.bias.iter().all(|&v| v == 0.0));
    }
}
