use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Stride, zero padding and group count of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
            groups,
        }
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        let ph = h + 2 * self.padding.0;
        let pw = w + 2 * self.padding.1;
        if ph < kh || pw < kw {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride.0 + 1, (pw - kw) / self.stride.1 + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Scalar = f32> {
    /// `(C_out, C_in / groups, kH, kW)`
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub geometry: ConvGeometry,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Option<Vec<T>>, stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            kernel,
            bias,
            geometry: ConvGeometry::new(stride, padding, groups),
        }
    }

    /// Number of learnable scalars (kernel plus bias).
    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

pub(crate) fn check_conv<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&[T]>,
    geom: &ConvGeometry,
) -> Result<(usize, usize)> {
    let [_, cin, h, w] = input.dims();
    let [cout, cin_g, kh, kw] = kernel.dims();
    let groups = geom.groups;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::Config(format!(
            "groups {groups} must divide C_in {cin} and C_out {cout}"
        )));
    }
    if cin_g * groups != cin {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels per group, input has {} over {} groups",
            cin_g, cin, groups
        )));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::Shape(format!(
                "bias length {} does not match C_out {}",
                b.len(),
                cout
            )));
        }
    }
    geom.output_size(h, w, kh, kw)
}

/// Range of output positions `o` whose tap `o*stride + k - pad` lands inside `[0, len)`.
#[inline]
pub(crate) fn valid_range(out_len: usize, stride: usize, k: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k {
        (len + pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = hi.min(out_len);
    (lo.min(hi), hi)
}

/// Convolution without validation. Every output element accumulates its
/// products in `(c_in, kh, kw)` order starting from zero; bias is added last.
pub(crate) fn conv2d_unchecked<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&[T]>,
    geom: &ConvGeometry,
    ho: usize,
    wo: usize,
) -> Tensor<T> {
    let [n, cin, h, w] = input.dims();
    let [cout, cin_g, kh, kw] = kernel.dims();
    let cout_g = cout / geom.groups;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let kdata = kernel.data();
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    if ho * wo == 0 {
        return out;
    }
    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(plane_idx, dst)| {
            let b = plane_idx / cout;
            let o = plane_idx % cout;
            let group = o / cout_g;
            for ci in 0..cin_g {
                let src = input.plane(b, group * cin_g + ci);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = kdata[((o * cin_g + ci) * kh + ky) * kw + kx];
                        let (ox0, ox1) = valid_range(wo, sw, kx, pw, w);
                        if ox0 == ox1 {
                            continue;
                        }
                        let (oy0, oy1) = valid_range(ho, sh, ky, ph, h);
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - ph;
                            let in_row = &src[iy * w..(iy + 1) * w];
                            let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                            if sw == 1 {
                                let off = ox0 + kx - pw;
                                let len = ox1 - ox0;
                                for (d, &s) in out_row[ox0..ox1].iter_mut().zip(&in_row[off..off + len]) {
                                    *d = *d + wv * s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    out_row[ox] = out_row[ox] + wv * in_row[ox * sw + kx - pw];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                let bv = bias[o];
                for d in dst.iter_mut() {
                    *d = *d + bv;
                }
            }
        });
    let _ = cin;
    out
}

/// Grouped 2-D convolution with zero padding.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let bias = params.bias.as_deref();
    let (ho, wo) = check_conv(input, &params.kernel, bias, &params.geometry)?;
    input.ensure_finite("conv2d input")?;
    Ok(conv2d_unchecked(input, &params.kernel, bias, &params.geometry, ho, wo))
}

/// Per-channel spatial filtering: `groups == C_in == C_out`.
pub fn depthwise_conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let cin = input.channels();
    let cout = params.kernel.dims()[0];
    if params.geometry.groups != cin || cout != cin {
        return Err(Error::Config(format!(
            "depthwise convolution needs groups == C_in == C_out, got groups {}, C_in {}, C_out {}",
            params.geometry.groups, cin, cout
        )));
    }
    conv2d(input, params)
}

/// 1×1 cross-channel mixing.
pub fn pointwise_conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let [_, _, kh, kw] = params.kernel.dims();
    if kh != 1 || kw != 1 || params.geometry.groups != 1 {
        return Err(Error::Config(format!(
            "pointwise convolution needs a 1x1 kernel with one group, got {kh}x{kw} with {} groups",
            params.geometry.groups
        )));
    }
    conv2d(input, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with batch statistics and update the running estimates.
    Train,
    /// Normalise with the running estimates.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T: Scalar = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    /// Weight of the newest batch in the running-statistic update.
    pub momentum: T,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::of(1e-5),
            momentum: T::of(0.1),
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let lens = [
            self.gamma.len(),
            self.beta.len(),
            self.running_mean.len(),
            self.running_var.len(),
        ];
        if lens.iter().any(|&l| l != channels) {
            return Err(Error::Shape(format!(
                "batch-norm parameters sized {lens:?}, input has {channels} channels"
            )));
        }
        if !(self.eps >= T::zero()) {
            return Err(Error::Validation("batch-norm epsilon must be non-negative".into()));
        }
        if let Some(c) = self.running_var.iter().position(|&v| !(v >= T::zero())) {
            return Err(Error::Validation(format!(
                "running variance of channel {c} is negative"
            )));
        }
        if let Some(c) = self.running_var.iter().position(|&v| v + self.eps <= T::zero()) {
            return Err(Error::Validation(format!(
                "running variance plus epsilon is zero for channel {c}"
            )));
        }
        Ok(())
    }
}

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T: Scalar = f32> {
    pub mean: Vec<f64>,
    /// Biased (population) variance used for normalisation.
    pub var: Vec<f64>,
    pub invstd: Vec<T>,
    /// Elements per channel (`N·H·W`).
    pub count: usize,
}

impl<T: Scalar> BatchStats<T> {
    pub fn unbiased_var(&self, c: usize) -> f64 {
        if self.count > 1 {
            self.var[c] * self.count as f64 / (self.count - 1) as f64
        } else {
            self.var[c]
        }
    }
}

/// Batch normalisation with batch statistics; returns the output, the
/// statistics and the normalised input `x̂` (needed by the backward pass).
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Tensor<T>, BatchStats<T>, Tensor<T>) {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let count = n * hw;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let mut invstd = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x.plane(b, ch).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = if count > 0 { s / count as f64 } else { 0.0 };
        let mut ss = 0.0;
        for b in 0..n {
            ss += x
                .plane(b, ch)
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        let v = if count > 0 { ss / count as f64 } else { 0.0 };
        mean[ch] = m;
        var[ch] = v;
        invstd[ch] = T::of(1.0 / (v + eps.as_f64()).sqrt());
    }
    let mut xhat = Tensor::zeros(x.dims());
    let mut y = Tensor::zeros(x.dims());
    for b in 0..n {
        for ch in 0..c {
            let m = T::of(mean[ch]);
            let is = invstd[ch];
            let (g, bt) = (gamma[ch], beta[ch]);
            let src = x.plane(b, ch);
            let start = (b * c + ch) * hw;
            let xh = &mut xhat.data_mut()[start..start + hw];
            for (d, &s) in xh.iter_mut().zip(src) {
                *d = (s - m) * is;
            }
            let dst = &mut y.data_mut()[start..start + hw];
            for (d, &s) in dst.iter_mut().zip(xhat.plane(b, ch)) {
                *d = g * s + bt;
            }
        }
    }
    (
        y,
        BatchStats {
            mean,
            var,
            invstd,
            count,
        },
        xhat,
    )
}

/// Batch normalisation with fixed statistics:
/// `(x − mean) / sqrt(var + eps) · gamma + beta`.
pub fn batch_norm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Tensor<T> {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let mut y = Tensor::zeros(x.dims());
    for b in 0..n {
        for ch in 0..c {
            let is = T::one() / (running_var[ch] + eps).sqrt();
            let scale = gamma[ch] * is;
            let m = running_mean[ch];
            let bt = beta[ch];
            let start = (b * c + ch) * hw;
            let dst = &mut y.data_mut()[start..start + hw];
            for (d, &s) in dst.iter_mut().zip(x.plane(b, ch)) {
                *d = (s - m) * scale + bt;
            }
        }
    }
    y
}

/// Batch normalisation. In [`BnMode::Train`] the running statistics in
/// `params` are updated with the unbiased batch variance.
pub fn batch_norm<T: Scalar>(input: &Tensor<T>, params: &mut BatchNormParams<T>, mode: BnMode) -> Result<Tensor<T>> {
    params.validate(input.channels())?;
    input.ensure_finite("batch_norm input")?;
    match mode {
        BnMode::Infer => Ok(batch_norm_infer(
            input,
            &params.gamma,
            &params.beta,
            &params.running_mean,
            &params.running_var,
            params.eps,
        )),
        BnMode::Train => {
            let (y, stats, _) = batch_norm_train(input, &params.gamma, &params.beta, params.eps);
            let m = params.momentum;
            for c in 0..input.channels() {
                params.running_mean[c] = (T::one() - m) * params.running_mean[c] + m * T::of(stats.mean[c]);
                params.running_var[c] = (T::one() - m) * params.running_var[c] + m * T::of(stats.unbiased_var(c));
            }
            Ok(y)
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// `x · sigmoid(x)`
pub fn silu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x * sigmoid_scalar(x))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Nearest-neighbour 2× upsampling: each pixel becomes a 2×2 block.
pub fn upsample_nearest_2x<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.dims();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let w2 = 2 * w;
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for x in 0..w {
                    let v = src[y * w + x];
                    let top = 2 * y * w2 + 2 * x;
                    dst[top] = v;
                    dst[top + 1] = v;
                    dst[top + w2] = v;
                    dst[top + w2 + 1] = v;
                }
            }
        }
    }
    out
}

/// Stride-2 subsampling that keeps the top-left pixel of every 2×2 block.
pub fn downsample_pick_2x<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.dims();
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..ho {
                for x in 0..wo {
                    dst[y * wo + x] = src[2 * y * w + 2 * x];
                }
            }
        }
    }
    out
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "cannot add {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} and {:?} along channels",
            a.dims(),
            b.dims()
        )));
    }
    let per_a = ca * ha * wa;
    let per_b = cb * hb * wb;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..na {
        data.extend_from_slice(&a.data()[n * per_a..(n + 1) * per_a]);
        data.extend_from_slice(&b.data()[n * per_b..(n + 1) * per_b]);
    }
    Tensor::new([na, ca + cb, ha, wa], data)
}
