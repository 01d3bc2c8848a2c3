//! Layer normalization and 2D convolution.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{FeatureMap, Tensor};

/// Per-channel affine parameters for layer normalization.
///
/// Normalization runs over the channel axis at each spatial position:
/// the channel vector is shifted to zero mean and scaled to unit variance
/// (guarded by `epsilon`), then mapped through `gain * v + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T: Real> {
    pub gain: Vec<T>,
    pub shift: Vec<T>,
    pub epsilon: T,
}

impl<T: Real> LayerNormParams<T> {
    /// Unit gain, zero shift, epsilon 1e-5.
    pub fn identity(channels: usize) -> Self {
        LayerNormParams {
            gain: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            epsilon: T::from_f64(1e-5),
        }
    }

    pub fn new(gain: Vec<T>, shift: Vec<T>, epsilon: T) -> Result<Self> {
        if epsilon < T::zero() {
            return Err(Error::InvalidParam("layer norm epsilon must be >= 0".into()));
        }
        if gain.len() != shift.len() {
            return Err(Error::ShapeMismatch(format!(
                "gain has {} entries, shift {}",
                gain.len(),
                shift.len()
            )));
        }
        Ok(LayerNormParams { gain, shift, epsilon })
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }
}

/// Normalize each spatial position's channel vector, then apply the affine
/// map. A constant channel vector (zero variance, epsilon 0) maps to the
/// shift vector. Reductions run in channel order.
pub fn layer_norm<T: Real>(x: &FeatureMap<T>, p: &LayerNormParams<T>) -> Result<FeatureMap<T>> {
    let d = x.channels();
    if p.channels() != d {
        return Err(Error::ShapeMismatch(format!(
            "layer norm params carry {} channels, input has {d}",
            p.channels()
        )));
    }
    let inv_d = T::one() / T::from_f64(d as f64);
    let mut out = FeatureMap::zeros(x.height(), x.width(), d)?;
    for y in 0..x.height() {
        for xx in 0..x.width() {
            let mut mean = T::zero();
            for c in 0..d {
                mean += x.get(y, xx, c);
            }
            mean *= inv_d;
            let mut var = T::zero();
            for c in 0..d {
                let dv = x.get(y, xx, c) - mean;
                var += dv * dv;
            }
            var *= inv_d;
            let denom = (var + p.epsilon).sqrt();
            for c in 0..d {
                let centered = x.get(y, xx, c) - mean;
                // 0/0 with epsilon 0 and a constant vector resolves to 0.
                let normed = if denom == T::zero() {
                    T::zero()
                } else {
                    centered / denom
                };
                out.set(y, xx, c, p.gain[c] * normed + p.shift[c]);
            }
        }
    }
    Ok(out)
}

/// Convolution kernel and geometry. Weights are stored as a rank-4 tensor
/// `[k_h, k_w, d_in, d_out]`; boundaries are zero-padded by `pad_h`/`pad_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl<T: Real> ConvParams<T> {
    pub fn new(
        weight: Tensor<T>,
        bias: Vec<T>,
        stride: usize,
        pad_h: usize,
        pad_w: usize,
    ) -> Result<Self> {
        if weight.shape().len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv weight wants rank 4, got shape {:?}",
                weight.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidParam("conv stride must be >= 1".into()));
        }
        let d_out = weight.shape()[3];
        if bias.len() != d_out {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} entries, kernel emits {d_out} channels",
                bias.len()
            )));
        }
        Ok(ConvParams {
            weight,
            bias,
            stride,
            pad_h,
            pad_w,
        })
    }

    /// 1x1 kernel carrying the identity map over channels, zero bias.
    pub fn identity_1x1(channels: usize) -> Self {
        let mut w = vec![T::zero(); channels * channels];
        for c in 0..channels {
            w[c * channels + c] = T::one();
        }
        ConvParams {
            weight: Tensor::new(vec![1, 1, channels, channels], w).unwrap(),
            bias: vec![T::zero(); channels],
            stride: 1,
            pad_h: 0,
            pad_w: 0,
        }
    }

    /// All-zero kernel with the given bias.
    pub fn zeroed(k_h: usize, k_w: usize, d_in: usize, d_out: usize, bias: Vec<T>) -> Result<Self> {
        ConvParams::new(
            Tensor::zeros(vec![k_h, k_w, d_in, d_out])?,
            bias,
            1,
            (k_h - 1) / 2,
            (k_w - 1) / 2,
        )
    }

    /// Deterministic small random kernel, zero bias, stride 1, no padding.
    pub fn seeded(k_h: usize, k_w: usize, d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        let fan_in = (k_h * k_w * d_in) as f64;
        let scale = T::from_f64(1.0 / fan_in.sqrt());
        let w: Tensor<T> = Tensor::seeded(vec![k_h, k_w, d_in, d_out], seed)?;
        let w = Tensor::new(
            w.shape().to_vec(),
            w.as_slice().iter().map(|&v| v * scale).collect(),
        )?;
        ConvParams::new(w, vec![T::zero(); d_out], 1, 0, 0)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn with_padding(mut self, pad_h: usize, pad_w: usize) -> Self {
        self.pad_h = pad_h;
        self.pad_w = pad_w;
        self
    }

    pub fn k_h(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn k_w(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[3]
    }
}

/// Cross-correlation convolution with zero padding.
///
/// Output extents are `(in + 2*pad - k) / stride + 1` per spatial axis. The
/// 1x1 stride-1 case is the pixelwise channel map used by the attention
/// output projections.
pub fn conv2d<T: Real>(x: &FeatureMap<T>, p: &ConvParams<T>) -> Result<FeatureMap<T>> {
    if p.d_in() != x.channels() {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {} input channels, feature map has {}",
            p.d_in(),
            x.channels()
        )));
    }
    let (k_h, k_w) = (p.k_h(), p.k_w());
    let padded_h = x.height() + 2 * p.pad_h;
    let padded_w = x.width() + 2 * p.pad_w;
    if padded_h < k_h || padded_w < k_w {
        return Err(Error::ShapeMismatch(format!(
            "kernel {k_h}x{k_w} does not fit padded input {padded_h}x{padded_w}"
        )));
    }
    let out_h = (padded_h - k_h) / p.stride + 1;
    let out_w = (padded_w - k_w) / p.stride + 1;
    let d_in = p.d_in();
    let d_out = p.d_out();
    let w = p.weight.as_slice();
    let mut out = FeatureMap::zeros(out_h, out_w, d_out)?;
    for oy in 0..out_h {
        for ox in 0..out_w {
            for oc in 0..d_out {
                let mut acc = p.bias[oc];
                for ky in 0..k_h {
                    let iy = (oy * p.stride + ky) as isize - p.pad_h as isize;
                    if iy < 0 || iy >= x.height() as isize {
                        continue;
                    }
                    for kx in 0..k_w {
                        let ix = (ox * p.stride + kx) as isize - p.pad_w as isize;
                        if ix < 0 || ix >= x.width() as isize {
                            continue;
                        }
                        for ic in 0..d_in {
                            let wv = w[((ky * k_w + kx) * d_in + ic) * d_out + oc];
                            acc += x.get(iy as usize, ix as usize, ic) * wv;
                        }
                    }
                }
                out.set(oy, ox, oc, acc);
            }
        }
    }
    Ok(out)
}
