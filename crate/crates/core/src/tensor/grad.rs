//! Analytic gradients of the tensor kernels. Each function receives the
//! upstream gradient plus whatever the forward pass saved.

use rayon::prelude::*;

use super::ops::{sigmoid_scalar, valid_range, ConvGeometry};
use super::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: &ConvGeometry,
    with_bias: bool,
) -> ConvGrads<T> {
    let [n, cin, h, w] = input.dims();
    let [cout, cin_g, kh, kw] = kernel.dims();
    let [_, _, ho, wo] = grad_out.dims();
    let cout_g = cout / geom.groups;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let kdata = kernel.data();

    let mut grad_in = Tensor::zeros([n, cin, h, w]);
    if h * w > 0 {
        grad_in
            .data_mut()
            .par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(plane_idx, dst)| {
                let b = plane_idx / cin;
                let c = plane_idx % cin;
                let group = c / cin_g;
                let ci = c % cin_g;
                for o in group * cout_g..(group + 1) * cout_g {
                    let gplane = grad_out.plane(b, o);
                    for ky in 0..kh {
                        let (oy0, oy1) = valid_range(ho, sh, ky, ph, h);
                        for kx in 0..kw {
                            let wv = kdata[((o * cin_g + ci) * kh + ky) * kw + kx];
                            let (ox0, ox1) = valid_range(wo, sw, kx, pw, w);
                            if ox0 == ox1 {
                                continue;
                            }
                            for oy in oy0..oy1 {
                                let iy = oy * sh + ky - ph;
                                let g_row = &gplane[oy * wo..(oy + 1) * wo];
                                let in_row = &mut dst[iy * w..(iy + 1) * w];
                                if sw == 1 {
                                    let off = ox0 + kx - pw;
                                    let len = ox1 - ox0;
                                    for (d, &g) in in_row[off..off + len].iter_mut().zip(&g_row[ox0..ox1]) {
                                        *d = *d + wv * g;
                                    }
                                } else {
                                    for ox in ox0..ox1 {
                                        let ix = ox * sw + kx - pw;
                                        in_row[ix] = in_row[ix] + wv * g_row[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            });
    }

    let per_out = cin_g * kh * kw;
    let mut grad_k = Tensor::zeros(kernel.dims());
    if per_out > 0 {
        grad_k
            .data_mut()
            .par_chunks_mut(per_out)
            .enumerate()
            .for_each(|(o, dst)| {
                let group = o / cout_g;
                for ci in 0..cin_g {
                    for ky in 0..kh {
                        let (oy0, oy1) = valid_range(ho, sh, ky, ph, h);
                        for kx in 0..kw {
                            let (ox0, ox1) = valid_range(wo, sw, kx, pw, w);
                            let mut acc = T::zero();
                            for b in 0..n {
                                let src = input.plane(b, group * cin_g + ci);
                                let g = grad_out.plane(b, o);
                                for oy in oy0..oy1 {
                                    let iy = oy * sh + ky - ph;
                                    let g_row = &g[oy * wo..(oy + 1) * wo];
                                    let in_row = &src[iy * w..(iy + 1) * w];
                                    if sw == 1 {
                                        let off = ox0 + kx - pw;
                                        let len = ox1 - ox0;
                                        acc = acc + dot(&g_row[ox0..ox1], &in_row[off..off + len]);
                                    } else {
                                        for ox in ox0..ox1 {
                                            acc = acc + g_row[ox] * in_row[ox * sw + kx - pw];
                                        }
                                    }
                                }
                            }
                            dst[(ci * kh + ky) * kw + kx] = acc;
                        }
                    }
                }
            });
    }

    let bias = with_bias.then(|| {
        (0..cout)
            .map(|o| {
                let mut acc = T::zero();
                for b in 0..n {
                    acc = acc + grad_out.plane(b, o).iter().fold(T::zero(), |s, &v| s + v);
                }
                acc
            })
            .collect()
    });

    ConvGrads {
        input: grad_in,
        kernel: grad_k,
        bias,
    }
}

/// Dot product with four independent partial sums; the order is fixed so
/// results are reproducible.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] = acc[l] + a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward of training-mode batch normalisation, given the saved `x̂`
/// and per-channel `1/sqrt(var + eps)`.
pub fn batch_norm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    xhat: &Tensor<T>,
    invstd: &[T],
    gamma: &[T],
) -> BatchNormGrads<T> {
    let [n, c, h, w] = grad_out.dims();
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = Tensor::zeros(grad_out.dims());
    for ch in 0..c {
        let mut sg = 0.0;
        let mut sgx = 0.0;
        for b in 0..n {
            for (&g, &xh) in grad_out.plane(b, ch).iter().zip(xhat.plane(b, ch)) {
                sg += g.as_f64();
                sgx += g.as_f64() * xh.as_f64();
            }
        }
        dbeta[ch] = T::of(sg);
        dgamma[ch] = T::of(sgx);
        if m == 0.0 {
            continue;
        }
        let k = T::of(gamma[ch].as_f64() * invstd[ch].as_f64() / m);
        let mt = T::of(m);
        let (tsg, tsgx) = (T::of(sg), T::of(sgx));
        for b in 0..n {
            let start = (b * c + ch) * hw;
            let g = grad_out.plane(b, ch);
            let xh = xhat.plane(b, ch);
            let dst = &mut dx.data_mut()[start..start + hw];
            for i in 0..hw {
                dst[i] = k * (mt * g[i] - tsg - xh[i] * tsgx);
            }
        }
    }
    BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

/// Backward of inference-mode batch normalisation (fixed statistics).
pub fn batch_norm_infer_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> BatchNormGrads<T> {
    let [n, c, h, w] = grad_out.dims();
    let hw = h * w;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = Tensor::zeros(grad_out.dims());
    for ch in 0..c {
        let is = T::one() / (running_var[ch] + eps).sqrt();
        let scale = gamma[ch] * is;
        let mut sg = 0.0;
        let mut sgx = 0.0;
        for b in 0..n {
            let start = (b * c + ch) * hw;
            let g = grad_out.plane(b, ch);
            let xs = x.plane(b, ch);
            let dst = &mut dx.data_mut()[start..start + hw];
            for i in 0..hw {
                dst[i] = g[i] * scale;
                sg += g[i].as_f64();
                sgx += g[i].as_f64() * ((xs[i] - running_mean[ch]) * is).as_f64();
            }
        }
        dgamma[ch] = T::of(sgx);
        dbeta[ch] = T::of(sg);
    }
    BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

/// `d silu / dx = σ(x)·(1 + x·(1 − σ(x)))`
pub fn silu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut out = grad_out.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        let s = sigmoid_scalar(v);
        *g = *g * s * (T::one() + v * (T::one() - s));
    }
    out
}

/// Uses the forward output `y = σ(x)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut out = grad_out.clone();
    for (g, &s) in out.data_mut().iter_mut().zip(y.data()) {
        *g = *g * s * (T::one() - s);
    }
    out
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut out = grad_out.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    out
}

/// Sums each 2×2 block of the upstream gradient.
pub fn upsample_nearest_2x_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = grad_out.dims();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for x in 0..w {
                    let top = 2 * y * w2 + 2 * x;
                    dst[y * w + x] = (src[top] + src[top + 1]) + (src[top + w2] + src[top + w2 + 1]);
                }
            }
        }
    }
    out
}

/// Splits the upstream gradient back into the `a` and `b` channel blocks.
pub fn concat_backward<T: Scalar>(grad_out: &Tensor<T>, channels_a: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = grad_out.dims();
    let cb = c - channels_a;
    let hw = h * w;
    let mut ga = Vec::with_capacity(n * channels_a * hw);
    let mut gb = Vec::with_capacity(n * cb * hw);
    for b in 0..n {
        let base = b * c * hw;
        ga.extend_from_slice(&grad_out.data()[base..base + channels_a * hw]);
        gb.extend_from_slice(&grad_out.data()[base + channels_a * hw..base + c * hw]);
    }
    (
        Tensor::new([n, channels_a, h, w], ga).expect("sizes derived from grad_out"),
        Tensor::new([n, cb, h, w], gb).expect("sizes derived from grad_out"),
    )
}
