//! Fourier self-attention, bidirectional cross-attention, and the
//! two-branch RGB/depth encoder pipeline.
//!
//! The attention map is the circular cross-correlation of the Q and K
//! projections computed in the frequency domain, normalized per position,
//! multiplied element-wise into the V projection, and fed back through a
//! 1x1 convolution onto the residual path:
//!
//! ```text
//! A    = IFFT(FFT(Q) * conj(FFT(K)))
//! V'   = norm(A) . V
//! out  = f + conv1x1(V')
//! ```
//!
//! Cross-attention runs the same pipeline with the query taken from the
//! other branch, in both directions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{conv2d, layer_norm, ConvParams, LayerNormParams};
use crate::real::Real;
use crate::spectral::spectral_correlate;
use crate::tensor::{load_fmft, FeatureMap, Tensor};

/// Projections and output map for one attention block.
///
/// Q/K/V preserve the channel count; the output convolution is 1x1 back to
/// the same channel count so the residual sum is well-formed.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T: Real> {
    pub q: ConvParams<T>,
    pub k: ConvParams<T>,
    pub v: ConvParams<T>,
    pub norm: LayerNormParams<T>,
    pub out: ConvParams<T>,
}

impl<T: Real> AttentionParams<T> {
    /// Seeded random 1x1 projections; output conv has zero bias so the
    /// zero-projection identity invariant holds out of the box.
    pub fn seeded(channels: usize, seed: u64) -> Result<Self> {
        Ok(AttentionParams {
            q: ConvParams::seeded(1, 1, channels, channels, seed)?,
            k: ConvParams::seeded(1, 1, channels, channels, seed.wrapping_add(1))?,
            v: ConvParams::seeded(1, 1, channels, channels, seed.wrapping_add(2))?,
            norm: LayerNormParams::identity(channels),
            out: ConvParams::seeded(1, 1, channels, channels, seed.wrapping_add(3))?,
        })
    }

    /// Zero Q/K/V projections and zero output conv: the attention operator
    /// becomes the identity on its feature input.
    pub fn zeroed(channels: usize) -> Result<Self> {
        Ok(AttentionParams {
            q: ConvParams::zeroed(1, 1, channels, channels, vec![T::zero(); channels])?,
            k: ConvParams::zeroed(1, 1, channels, channels, vec![T::zero(); channels])?,
            v: ConvParams::zeroed(1, 1, channels, channels, vec![T::zero(); channels])?,
            norm: LayerNormParams::identity(channels),
            out: ConvParams::zeroed(1, 1, channels, channels, vec![T::zero(); channels])?,
        })
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, conv) in [("q", &self.q), ("k", &self.k), ("v", &self.v)] {
            if conv.d_in() != channels || conv.d_out() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "{name} projection must map {channels} -> {channels} channels, got {} -> {}",
                    conv.d_in(),
                    conv.d_out()
                )));
            }
        }
        if self.out.k_h() != 1 || self.out.k_w() != 1 {
            return Err(Error::ShapeMismatch("output conv must be 1x1".into()));
        }
        if self.out.d_in() != channels || self.out.d_out() != channels {
            return Err(Error::ShapeMismatch(format!(
                "output conv must map {channels} -> {channels} channels"
            )));
        }
        if self.norm.channels() != channels {
            return Err(Error::ShapeMismatch("norm params channel mismatch".into()));
        }
        Ok(())
    }
}

/// Apply the Q/K/V projections of one branch.
pub fn project_qkv<T: Real>(
    f: &FeatureMap<T>,
    p: &AttentionParams<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>, FeatureMap<T>)> {
    p.validate(f.channels())?;
    Ok((conv2d(f, &p.q)?, conv2d(f, &p.k)?, conv2d(f, &p.v)?))
}

fn attention_core<T: Real>(
    q: &FeatureMap<T>,
    k: &FeatureMap<T>,
    v: &FeatureMap<T>,
    residual: &FeatureMap<T>,
    norm: &LayerNormParams<T>,
    out: &ConvParams<T>,
) -> Result<FeatureMap<T>> {
    let attn = spectral_correlate(q, k)?;
    let gated = layer_norm(&attn, norm)?.hadamard(v)?;
    residual.add(&conv2d(&gated, out)?)
}

/// Self-attention of one branch.
pub fn fourier_self_attention<T: Real>(
    f: &FeatureMap<T>,
    p: &AttentionParams<T>,
) -> Result<FeatureMap<T>> {
    let (q, k, v) = project_qkv(f, p)?;
    attention_core(&q, &k, &v, f, &p.norm, &p.out)
}

/// Parameters for the two cross-attention directions. The RGB-direction
/// output correlates the depth branch's query against the RGB branch's key;
/// the depth direction mirrors the roles.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionParams<T: Real> {
    pub rgb: AttentionParams<T>,
    pub depth: AttentionParams<T>,
}

impl<T: Real> CrossAttentionParams<T> {
    pub fn seeded(channels: usize, seed: u64) -> Result<Self> {
        Ok(CrossAttentionParams {
            rgb: AttentionParams::seeded(channels, seed)?,
            depth: AttentionParams::seeded(channels, seed.wrapping_add(100))?,
        })
    }

    pub fn zeroed(channels: usize) -> Result<Self> {
        Ok(CrossAttentionParams {
            rgb: AttentionParams::zeroed(channels)?,
            depth: AttentionParams::zeroed(channels)?,
        })
    }

    /// Identical parameters in both directions.
    pub fn mirrored(p: AttentionParams<T>) -> Self {
        CrossAttentionParams {
            rgb: p.clone(),
            depth: p,
        }
    }
}

/// Bidirectional cross-attention between the RGB and depth branches.
pub fn fourier_cross_attention<T: Real>(
    f_r: &FeatureMap<T>,
    f_d: &FeatureMap<T>,
    p: &CrossAttentionParams<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    if !f_r.same_shape(f_d) {
        return Err(Error::ShapeMismatch(format!(
            "cross-attention wants equal branch shapes, got {}x{}x{} vs {}x{}x{}",
            f_r.height(),
            f_r.width(),
            f_r.channels(),
            f_d.height(),
            f_d.width(),
            f_d.channels()
        )));
    }
    let (q_r, k_r, v_r) = project_qkv(f_r, &p.rgb)?;
    let (q_d, k_d, v_d) = project_qkv(f_d, &p.depth)?;
    let out_r = attention_core(&q_d, &k_r, &v_r, f_r, &p.rgb.norm, &p.rgb.out)?;
    let out_d = attention_core(&q_r, &k_d, &v_d, f_d, &p.depth.norm, &p.depth.out)?;
    Ok((out_r, out_d))
}

/// Full two-branch encoder: per-branch conv stacks, per-branch
/// self-attention, then bidirectional cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T: Real> {
    pub rgb_stack: Vec<ConvParams<T>>,
    pub depth_stack: Vec<ConvParams<T>>,
    pub self_rgb: AttentionParams<T>,
    pub self_depth: AttentionParams<T>,
    pub cross: CrossAttentionParams<T>,
    pub stride: usize,
}

impl<T: Real> EncoderParams<T> {
    /// Seeded encoder: one patchify convolution per branch (kernel = stride,
    /// step = stride) into `channels`, zero biases throughout.
    pub fn seeded(stride: usize, channels: usize, seed: u64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParam("feature stride must be >= 1".into()));
        }
        Ok(EncoderParams {
            rgb_stack: vec![
                ConvParams::seeded(stride, stride, 3, channels, seed)?.with_stride(stride)
            ],
            depth_stack: vec![ConvParams::seeded(stride, stride, 1, channels, seed.wrapping_add(1))?
                .with_stride(stride)],
            self_rgb: AttentionParams::seeded(channels, seed.wrapping_add(10))?,
            self_depth: AttentionParams::seeded(channels, seed.wrapping_add(20))?,
            cross: CrossAttentionParams::seeded(channels, seed.wrapping_add(30))?,
            stride,
        })
    }

    pub fn channels(&self) -> usize {
        self.rgb_stack
            .last()
            .map(|c| c.d_out())
            .unwrap_or(0)
    }
}

fn run_stack<T: Real>(input: FeatureMap<T>, stack: &[ConvParams<T>]) -> Result<FeatureMap<T>> {
    let mut cur = input;
    for conv in stack {
        cur = conv2d(&cur, conv)?;
    }
    Ok(cur)
}

/// Encode an RGB image (H x W x 3) and a depth image (H x W x 1) into the
/// fused feature maps of both branches.
pub fn encode_pair<T: Real>(
    rgb: &Tensor<T>,
    depth: &Tensor<T>,
    p: &EncoderParams<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    let rs = rgb.shape();
    let ds = depth.shape();
    if rs.len() != 3 || rs[2] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "rgb input wants shape [h, w, 3], got {rs:?}"
        )));
    }
    if ds.len() != 3 || ds[2] != 1 {
        return Err(Error::ShapeMismatch(format!(
            "depth input wants shape [h, w, 1], got {ds:?}"
        )));
    }
    if rs[0] != ds[0] || rs[1] != ds[1] {
        return Err(Error::ShapeMismatch(format!(
            "rgb {}x{} vs depth {}x{}",
            rs[0], rs[1], ds[0], ds[1]
        )));
    }
    if !rs[0].is_multiple_of(p.stride) || !rs[1].is_multiple_of(p.stride) {
        return Err(Error::InvalidParam(format!(
            "extents {}x{} not divisible by feature stride {}",
            rs[0], rs[1], p.stride
        )));
    }
    let f_r = run_stack(FeatureMap::from_tensor(rgb.clone())?, &p.rgb_stack)?;
    let f_d = run_stack(FeatureMap::from_tensor(depth.clone())?, &p.depth_stack)?;
    if !f_r.same_shape(&f_d) {
        return Err(Error::ShapeMismatch(format!(
            "branch stacks disagree: {}x{}x{} vs {}x{}x{}",
            f_r.height(),
            f_r.width(),
            f_r.channels(),
            f_d.height(),
            f_d.width(),
            f_d.channels()
        )));
    }
    let f_r = fourier_self_attention(&f_r, &p.self_rgb)?;
    let f_d = fourier_self_attention(&f_d, &p.self_depth)?;
    fourier_cross_attention(&f_r, &f_d, &p.cross)
}

// ---------------------------------------------------------------------------
// Parameter bundle serialization: a directory of FMFT tensors plus a
// manifest text file naming each tensor's role.

const MANIFEST: &str = "params.manifest";

fn conv_to_entries<T: Real>(
    role: &str,
    conv: &ConvParams<T>,
    dir: &Path,
    manifest: &mut String,
) -> Result<()> {
    let wfile = format!("{}_weight.fmft", role.replace('.', "_"));
    let bfile = format!("{}_bias.fmft", role.replace('.', "_"));
    conv.weight.save_fmft(dir.join(&wfile))?;
    Tensor::new(vec![conv.bias.len()], conv.bias.clone())?.save_fmft(dir.join(&bfile))?;
    writeln!(manifest, "tensor.{role}.weight = {wfile}").unwrap();
    writeln!(manifest, "tensor.{role}.bias = {bfile}").unwrap();
    writeln!(manifest, "meta.{role}.stride = {}", conv.stride).unwrap();
    writeln!(manifest, "meta.{role}.pad_h = {}", conv.pad_h).unwrap();
    writeln!(manifest, "meta.{role}.pad_w = {}", conv.pad_w).unwrap();
    Ok(())
}

fn attention_to_entries<T: Real>(
    role: &str,
    p: &AttentionParams<T>,
    dir: &Path,
    manifest: &mut String,
) -> Result<()> {
    conv_to_entries(&format!("{role}.q"), &p.q, dir, manifest)?;
    conv_to_entries(&format!("{role}.k"), &p.k, dir, manifest)?;
    conv_to_entries(&format!("{role}.v"), &p.v, dir, manifest)?;
    conv_to_entries(&format!("{role}.out"), &p.out, dir, manifest)?;
    let base = role.replace('.', "_");
    let gain = format!("{base}_norm_gain.fmft");
    let shift = format!("{base}_norm_shift.fmft");
    let eps = format!("{base}_norm_epsilon.fmft");
    Tensor::new(vec![p.norm.gain.len()], p.norm.gain.clone())?.save_fmft(dir.join(&gain))?;
    Tensor::new(vec![p.norm.shift.len()], p.norm.shift.clone())?.save_fmft(dir.join(&shift))?;
    Tensor::new(vec![1], vec![p.norm.epsilon])?.save_fmft(dir.join(&eps))?;
    writeln!(manifest, "tensor.{role}.norm.gain = {gain}").unwrap();
    writeln!(manifest, "tensor.{role}.norm.shift = {shift}").unwrap();
    writeln!(manifest, "tensor.{role}.norm.epsilon = {eps}").unwrap();
    Ok(())
}

/// Write an encoder parameter bundle into `dir`.
pub fn save_encoder_params<T: Real>(dir: &Path, p: &EncoderParams<T>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    writeln!(manifest, "stride = {}", p.stride).unwrap();
    writeln!(manifest, "rgb_stack.len = {}", p.rgb_stack.len()).unwrap();
    writeln!(manifest, "depth_stack.len = {}", p.depth_stack.len()).unwrap();
    for (i, conv) in p.rgb_stack.iter().enumerate() {
        conv_to_entries(&format!("rgb_stack.{i}"), conv, dir, &mut manifest)?;
    }
    for (i, conv) in p.depth_stack.iter().enumerate() {
        conv_to_entries(&format!("depth_stack.{i}"), conv, dir, &mut manifest)?;
    }
    attention_to_entries("self_rgb", &p.self_rgb, dir, &mut manifest)?;
    attention_to_entries("self_depth", &p.self_depth, dir, &mut manifest)?;
    attention_to_entries("cross_rgb", &p.cross.rgb, dir, &mut manifest)?;
    attention_to_entries("cross_depth", &p.cross.depth, dir, &mut manifest)?;
    std::fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

struct ManifestReader<'a> {
    dir: &'a Path,
    entries: BTreeMap<String, String>,
}

impl<'a> ManifestReader<'a> {
    fn open(dir: &'a Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected `key = value`".into(),
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ManifestReader { dir, entries })
    }

    fn take(&mut self, key: &str) -> Result<String> {
        self.entries.remove(key).ok_or_else(|| Error::Parse {
            path: self.dir.join(MANIFEST).display().to_string(),
            line: 0,
            msg: format!("missing manifest entry `{key}`"),
        })
    }

    fn take_usize(&mut self, key: &str) -> Result<usize> {
        let v = self.take(key)?;
        v.parse().map_err(|_| Error::Parse {
            path: self.dir.join(MANIFEST).display().to_string(),
            line: 0,
            msg: format!("entry `{key}` is not an integer: {v}"),
        })
    }

    fn tensor<T: Real>(&mut self, key: &str) -> Result<Tensor<T>> {
        let file = self.take(&format!("tensor.{key}"))?;
        Ok(load_fmft(self.dir.join(file))?.cast())
    }

    fn conv<T: Real>(&mut self, role: &str) -> Result<ConvParams<T>> {
        let weight = self.tensor(&format!("{role}.weight"))?;
        let bias = self.tensor::<T>(&format!("{role}.bias"))?.into_data();
        let stride = self.take_usize(&format!("meta.{role}.stride"))?;
        let pad_h = self.take_usize(&format!("meta.{role}.pad_h"))?;
        let pad_w = self.take_usize(&format!("meta.{role}.pad_w"))?;
        ConvParams::new(weight, bias, stride, pad_h, pad_w)
    }

    fn attention<T: Real>(&mut self, role: &str) -> Result<AttentionParams<T>> {
        let q = self.conv(&format!("{role}.q"))?;
        let k = self.conv(&format!("{role}.k"))?;
        let v = self.conv(&format!("{role}.v"))?;
        let out = self.conv(&format!("{role}.out"))?;
        let gain = self.tensor::<T>(&format!("{role}.norm.gain"))?.into_data();
        let shift = self.tensor::<T>(&format!("{role}.norm.shift"))?.into_data();
        let eps = self.tensor::<T>(&format!("{role}.norm.epsilon"))?.into_data();
        if eps.len() != 1 {
            return Err(Error::ShapeMismatch("norm epsilon must be a scalar".into()));
        }
        Ok(AttentionParams {
            q,
            k,
            v,
            norm: LayerNormParams::new(gain, shift, eps[0])?,
            out,
        })
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            return Err(Error::Parse {
                path: self.dir.join(MANIFEST).display().to_string(),
                line: 0,
                msg: format!("unknown manifest entry `{key}`"),
            });
        }
        Ok(())
    }
}

/// Load an encoder parameter bundle written by [`save_encoder_params`].
/// Stored tensors are converted to the requested precision.
pub fn load_encoder_params<T: Real>(dir: &Path) -> Result<EncoderParams<T>> {
    let mut m = ManifestReader::open(dir)?;
    let stride = m.take_usize("stride")?;
    let rgb_len = m.take_usize("rgb_stack.len")?;
    let depth_len = m.take_usize("depth_stack.len")?;
    let mut rgb_stack = Vec::with_capacity(rgb_len);
    for i in 0..rgb_len {
        rgb_stack.push(m.conv(&format!("rgb_stack.{i}"))?);
    }
    let mut depth_stack = Vec::with_capacity(depth_len);
    for i in 0..depth_len {
        depth_stack.push(m.conv(&format!("depth_stack.{i}"))?);
    }
    let self_rgb = m.attention("self_rgb")?;
    let self_depth = m.attention("self_depth")?;
    let cross = CrossAttentionParams {
        rgb: m.attention("cross_rgb")?,
        depth: m.attention("cross_depth")?,
    };
    m.finish()?;
    Ok(EncoderParams {
        rgb_stack,
        depth_stack,
        self_rgb,
        self_depth,
        cross,
        stride,
    })
}
