//! Dense tensors, the `FMFT` binary container, and feature maps.
//!
//! `FMFT` layout: bytes 0–3 magic `FMFT`; byte 4 dtype (0x01 = 32-bit float,
//! 0x02 = 64-bit float); byte 5 number of dimensions; then one little-endian
//! unsigned 64-bit extent per dimension; then the row-major little-endian
//! payload. No compression.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::{DType, Real};

const MAGIC: [u8; 4] = *b"FMFT";

/// Dense real-valued multi-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidParam("tensor needs at least one axis".into()));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidParam(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::InvalidParam("shape overflows usize".into()))?;
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Tensor::new(shape, vec![T::zero(); len])
    }

    /// Deterministic uniform values in [-1, 1) from a ChaCha stream.
    pub fn seeded(shape: Vec<usize>, seed: u64) -> Result<Self> {
        let len = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..len)
            .map(|_| T::from_f64(rng.random_range(-1.0..1.0)))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Convert element type, widening or narrowing through f64.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(v.into_f64()))
                .collect(),
        }
    }

    /// Serialize in the `FMFT` container format.
    pub fn write_fmft<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(6 + 8 * self.shape.len() + self.len() * T::DTYPE.size());
        buf.extend_from_slice(&MAGIC);
        buf.push(T::DTYPE.byte());
        buf.push(self.shape.len() as u8);
        for &e in &self.shape {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut buf);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn save_fmft<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_fmft(std::io::BufWriter::new(f))
    }
}

/// Tensor read back from a file, carrying whichever precision was stored.
#[derive(Debug, Clone)]
pub enum DynTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl DynTensor {
    pub fn dtype(&self) -> DType {
        match self {
            DynTensor::F32(_) => DType::F32,
            DynTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DynTensor::F32(t) => t.shape(),
            DynTensor::F64(t) => t.shape(),
        }
    }

    /// Convert to the requested element type.
    pub fn cast<T: Real>(&self) -> Tensor<T> {
        match self {
            DynTensor::F32(t) => t.cast(),
            DynTensor::F64(t) => t.cast(),
        }
    }
}

/// Parse an `FMFT` stream. Rejects bad magic, unknown dtypes, truncated or
/// oversized payloads, and non-finite values.
pub fn read_fmft<R: Read>(mut r: R) -> Result<DynTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 6 {
        return Err(Error::Truncated {
            expected: 6,
            found: bytes.len(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let dtype = DType::from_byte(bytes[4]).ok_or(Error::BadDType(bytes[4]))?;
    let ndim = bytes[5] as usize;
    if ndim == 0 {
        return Err(Error::InvalidParam("tensor needs at least one axis".into()));
    }
    let header = 6 + 8 * ndim;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 6 + 8 * i;
        let mut ext = [0u8; 8];
        ext.copy_from_slice(&bytes[off..off + 8]);
        let e = u64::from_le_bytes(ext);
        if e == 0 {
            return Err(Error::InvalidParam("zero extent in stored shape".into()));
        }
        shape.push(e as usize);
    }
    let len: usize = shape.iter().product();
    let payload = len * dtype.size();
    if bytes.len() != header + payload {
        return Err(Error::Truncated {
            expected: header + payload,
            found: bytes.len(),
        });
    }

    fn decode<T: Real>(shape: Vec<usize>, raw: &[u8]) -> Result<Tensor<T>> {
        let step = T::DTYPE.size();
        let mut data = Vec::with_capacity(raw.len() / step);
        for (i, chunk) in raw.chunks_exact(step).enumerate() {
            let v = T::read_le(chunk);
            if !v.is_finite() {
                return Err(Error::NonFinite(i));
            }
            data.push(v);
        }
        Tensor::new(shape, data)
    }

    let raw = &bytes[header..];
    Ok(match dtype {
        DType::F32 => DynTensor::F32(decode(shape, raw)?),
        DType::F64 => DynTensor::F64(decode(shape, raw)?),
    })
}

pub fn load_fmft<P: AsRef<Path>>(path: P) -> Result<DynTensor> {
    let f = std::fs::File::open(path)?;
    read_fmft(std::io::BufReader::new(f))
}

/// W×H×D feature tensor for one modality branch.
///
/// Layout is H-major, then W, then D: element (y, x, c) lives at
/// `(y * width + x) * channels + c`. The backing tensor shape is
/// `[height, width, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Real> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidParam(format!(
                "feature map extents must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        FeatureMap::new(height, width, channels, vec![T::zero(); height * width * channels])
    }

    pub fn seeded(height: usize, width: usize, channels: usize, seed: u64) -> Result<Self> {
        let t = Tensor::seeded(vec![height, width, channels], seed)?;
        FeatureMap::new(height, width, channels, t.into_data())
    }

    /// Reinterpret a rank-3 tensor as a feature map.
    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        let shape = t.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "feature map wants a rank-3 tensor, got shape {shape:?}"
            )));
        }
        FeatureMap::new(shape[0], shape[1], shape[2], t.into_data())
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.height, self.width, self.channels],
            self.data.clone(),
        )
        .expect("feature map is always a valid tensor")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.idx(y, x, c);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(v.into_f64()))
                .collect(),
        }
    }

    /// Element-wise sum; shapes must match.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Hadamard product; shapes must match.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Largest absolute element difference relative to the largest absolute
/// element of either operand. Zero inputs compare with an absolute floor of
/// one so that all-zero pairs report zero error.
pub fn relative_error<T: Real>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> f64 {
    assert!(a.same_shape(b), "relative_error wants equal shapes");
    let mut max_diff = 0.0f64;
    let mut max_mag = 0.0f64;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        max_diff = max_diff.max((x.into_f64() - y.into_f64()).abs());
        max_mag = max_mag.max(x.into_f64().abs()).max(y.into_f64().abs());
    }
    max_diff / max_mag.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let t = Tensor::<f32>::seeded(vec![3, 5, 2], 3).unwrap();
        let mut buf = Vec::new();
        t.write_fmft(&mut buf).unwrap();
        let back = read_fmft(&buf[..]).unwrap();
        match back {
            DynTensor::F32(u) => {
                assert_eq!(u.shape(), t.shape());
                for (a, b) in t.as_slice().iter().zip(u.as_slice()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("dtype changed in round trip"),
        }

        let t = Tensor::<f64>::seeded(vec![7], 3).unwrap();
        let mut buf = Vec::new();
        t.write_fmft(&mut buf).unwrap();
        match read_fmft(&buf[..]).unwrap() {
            DynTensor::F64(u) => assert_eq!(u.as_slice(), t.as_slice()),
            _ => panic!("dtype changed in round trip"),
        }
    }

    #[test]
    fn header_layout_matches_format() {
        // shape (2,3), 32-bit: magic, dtype 0x01, ndim 0x02, extents as LE u64,
        // then 24 payload bytes.
        let t = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        let mut buf = Vec::new();
        t.write_fmft(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"FMFT");
        assert_eq!(buf[4], 0x01);
        assert_eq!(buf[5], 0x02);
        assert_eq!(&buf[6..14], &2u64.to_le_bytes());
        assert_eq!(&buf[14..22], &3u64.to_le_bytes());
        assert_eq!(buf.len(), 22 + 24);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let t = Tensor::<f32>::zeros(vec![2]).unwrap();
        let mut buf = Vec::new();
        t.write_fmft(&mut buf).unwrap();
        buf[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_fmft(&buf[..]), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_and_oversized_payloads_are_rejected() {
        let t = Tensor::<f64>::seeded(vec![4], 1).unwrap();
        let mut buf = Vec::new();
        t.write_fmft(&mut buf).unwrap();
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_fmft(short), Err(Error::Truncated { .. })));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_fmft(&long[..]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let t = Tensor::<f32>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_fmft(&mut buf).unwrap();
        let nan = f32::NAN.to_le_bytes();
        let n = buf.len();
        buf[n - 4..].copy_from_slice(&nan);
        assert!(matches!(read_fmft(&buf[..]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let t = Tensor::<f32>::zeros(vec![1]).unwrap();
        let mut buf = Vec::new();
        t.write_fmft(&mut buf).unwrap();
        buf[4] = 0x07;
        assert!(matches!(read_fmft(&buf[..]), Err(Error::BadDType(0x07))));
    }

    #[test]
    fn shape_data_agreement_is_enforced() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
        assert!(FeatureMap::<f64>::new(2, 2, 1, vec![0.0; 5]).is_err());
    }

    #[test]
    fn feature_map_layout_is_h_major() {
        let mut m = FeatureMap::<f64>::zeros(2, 3, 2).unwrap();
        m.set(1, 2, 1, 9.0);
        assert_eq!(m.as_slice()[(3 + 2) * 2 + 1], 9.0);
        assert_eq!(m.get(1, 2, 1), 9.0);
    }
}
