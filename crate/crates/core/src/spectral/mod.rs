//! Real 2D FFT with half-spectrum storage and circular cross-correlation.
//!
//! The forward transform is unnormalized, X[k] = sum_n x[n] exp(-2*pi*i*k*n/N);
//! the inverse carries the 1/(W*H) factor. For real inputs the spectrum is
//! Hermitian, X[k] = conj(X[-k]), so only the non-redundant half along the
//! last spatial axis (extent floor(W/2)+1) is stored.
//!
//! [`spectral_correlate`] computes circular cross-correlation per channel as
//! IFFT(FFT(q) * conj(FFT(k))). [`naive_correlate`] is the quadratic
//! direct-summation reference for the same quantity; the two must agree and
//! are cross-checked against each other in the tests and the bench harness.

mod fft;

use num_complex::Complex;

pub use fft::FftPlan;

use crate::counters;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::FeatureMap;

/// How the spatial axes are presented to the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FftMode {
    /// 2D transform over H and W per channel.
    #[default]
    TwoDim,
    /// 1D transform over the H*W positions flattened in scan order.
    Flattened,
}

/// Half-spectrum of a real 2D transform, one plane per channel.
///
/// Coefficients are stored in (ky, kx, channel) order with the kx axis
/// truncated to `half_width` bins. `feat_height`/`feat_width` are the
/// extents of the feature map the spectrum came from; the transform grid
/// is either (H, W) or (1, H*W) depending on the mode.
#[derive(Debug, Clone)]
pub struct SpectralTensor<T: Real> {
    feat_height: usize,
    feat_width: usize,
    channels: usize,
    mode: FftMode,
    data: Vec<Complex<T>>,
}

impl<T: Real> SpectralTensor<T> {
    pub fn feat_height(&self) -> usize {
        self.feat_height
    }

    pub fn feat_width(&self) -> usize {
        self.feat_width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mode(&self) -> FftMode {
        self.mode
    }

    /// Extents of the transform grid: (H, W) in 2D mode, (1, H*W) flattened.
    pub fn transform_dims(&self) -> (usize, usize) {
        match self.mode {
            FftMode::TwoDim => (self.feat_height, self.feat_width),
            FftMode::Flattened => (1, self.feat_height * self.feat_width),
        }
    }

    /// Number of stored bins along the last transform axis.
    pub fn half_width(&self) -> usize {
        let (_, tw) = self.transform_dims();
        tw / 2 + 1
    }

    #[inline]
    fn index(&self, ky: usize, kx: usize, c: usize) -> usize {
        (ky * self.half_width() + kx) * self.channels + c
    }

    pub fn coeff(&self, ky: usize, kx: usize, c: usize) -> Complex<T> {
        self.data[self.index(ky, kx, c)]
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.data
    }

    /// Reconstruct the full (th x tw) spectrum of one channel from the
    /// stored half via Hermitian symmetry. The mirrored bins are conjugates
    /// by construction.
    pub fn full_spectrum(&self, c: usize) -> Vec<Complex<T>> {
        let (th, tw) = self.transform_dims();
        let half = self.half_width();
        let mut full = vec![Complex::new(T::zero(), T::zero()); th * tw];
        for ky in 0..th {
            for kx in 0..tw {
                full[ky * tw + kx] = if kx < half {
                    self.coeff(ky, kx, c)
                } else {
                    self.coeff((th - ky) % th, tw - kx, c).conj()
                };
            }
        }
        full
    }

    /// a*self + b*other, bin by bin. Shapes and modes must match.
    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.feat_height != other.feat_height
            || self.feat_width != other.feat_width
            || self.channels != other.channels
            || self.mode != other.mode
        {
            return Err(Error::ShapeMismatch("spectra differ in shape or mode".into()));
        }
        Ok(SpectralTensor {
            feat_height: self.feat_height,
            feat_width: self.feat_width,
            channels: self.channels,
            mode: self.mode,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| x * a + y * b)
                .collect(),
        })
    }
}

/// Forward real transform in the default 2D mode.
pub fn fft_forward<T: Real>(x: &FeatureMap<T>) -> SpectralTensor<T> {
    fft_forward_mode(x, FftMode::TwoDim)
}

/// Forward real transform, per channel, storing the half-spectrum.
pub fn fft_forward_mode<T: Real>(x: &FeatureMap<T>, mode: FftMode) -> SpectralTensor<T> {
    let (th, tw) = match mode {
        FftMode::TwoDim => (x.height(), x.width()),
        FftMode::Flattened => (1, x.height() * x.width()),
    };
    let half = tw / 2 + 1;
    let d = x.channels();
    let plan_w = FftPlan::<T>::new(tw);
    let plan_h = FftPlan::<T>::new(th);
    let complex_size = std::mem::size_of::<Complex<T>>();
    let mut grid = vec![Complex::new(T::zero(), T::zero()); th * tw];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); tw.max(th)];
    let mut column = vec![Complex::new(T::zero(), T::zero()); th];
    counters::alloc_bytes(((grid.len() + scratch.len() + column.len()) * complex_size) as u64);

    let zero = Complex::new(T::zero(), T::zero());
    let mut data = vec![zero; th * half * d];
    counters::alloc_bytes((data.len() * complex_size) as u64);

    let values = x.as_slice();
    for c in 0..d {
        // Spatial scan order coincides with the flattened transform order.
        for (i, slot) in grid.iter_mut().enumerate() {
            *slot = Complex::new(values[i * d + c], T::zero());
        }
        for row in grid.chunks_exact_mut(tw) {
            plan_w.forward(row, &mut scratch[..tw]);
        }
        for kx in 0..half {
            for (ky, slot) in column.iter_mut().enumerate() {
                *slot = grid[ky * tw + kx];
            }
            plan_h.forward(&mut column, &mut scratch[..th]);
            for (ky, &v) in column.iter().enumerate() {
                data[(ky * half + kx) * d + c] = v;
            }
        }
        // The kx = 0 and kx = W/2 columns carry their own ky redundancy:
        // for real input, bin (ky, kx) equals conj((H-ky, kx)). Materialize
        // that relation exactly — zero the self-conjugate bins' imaginary
        // parts and copy the mirrored halves — so Hermitian reconstruction
        // is exact by construction.
        let mut self_conj_kx = vec![0usize];
        if tw % 2 == 0 && tw > 1 {
            self_conj_kx.push(tw / 2);
        }
        for &kx in &self_conj_kx {
            data[kx * d + c].im = T::zero();
            if th % 2 == 0 && th > 1 {
                data[((th / 2) * half + kx) * d + c].im = T::zero();
            }
            for ky in 1..=(th - 1) / 2 {
                let v = data[(ky * half + kx) * d + c];
                data[((th - ky) * half + kx) * d + c] = v.conj();
            }
        }
    }

    counters::free_bytes(((grid.len() + scratch.len() + column.len()) * complex_size) as u64);
    SpectralTensor {
        feat_height: x.height(),
        feat_width: x.width(),
        channels: d,
        mode,
        data,
    }
}

/// Inverse transform back to a real feature map, applying 1/(W*H).
///
/// Fails if the DC bin carries an imaginary part beyond tolerance, which
/// means the spectrum cannot have come from a real signal.
pub fn fft_inverse<T: Real>(s: &SpectralTensor<T>) -> Result<FeatureMap<T>> {
    let (th, tw) = s.transform_dims();
    let half = s.half_width();
    let d = s.channels;
    for c in 0..d {
        let dc = s.coeff(0, 0, c);
        let tol = T::from_f64(1e-6) * (T::one() + dc.re.abs());
        if dc.im.abs() > tol {
            return Err(Error::Numerical(format!(
                "inconsistent half-spectrum: DC imaginary part {} in channel {c}",
                dc.im
            )));
        }
    }

    let plan_w = FftPlan::<T>::new(tw);
    let plan_h = FftPlan::<T>::new(th);
    let complex_size = std::mem::size_of::<Complex<T>>();
    let mut grid = vec![Complex::new(T::zero(), T::zero()); th * tw];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); tw.max(th)];
    let mut column = vec![Complex::new(T::zero(), T::zero()); th];
    counters::alloc_bytes(((grid.len() + scratch.len() + column.len()) * complex_size) as u64);

    let mut out = FeatureMap::zeros(s.feat_height, s.feat_width, d)?;
    for c in 0..d {
        // Inverse over rows of the transform grid's ky axis first.
        for kx in 0..half {
            for (ky, slot) in column.iter_mut().enumerate() {
                *slot = s.coeff(ky, kx, c);
            }
            plan_h.inverse(&mut column, &mut scratch[..th]);
            for ky in 0..th {
                grid[ky * tw + kx] = column[ky];
            }
        }
        // Mirror the missing kx bins (conjugate symmetry survives the ky
        // inverse), then invert each row and keep the real part.
        for y in 0..th {
            let row = &mut grid[y * tw..(y + 1) * tw];
            for kx in half..tw {
                row[kx] = row[tw - kx].conj();
            }
            plan_w.inverse(row, &mut scratch[..tw]);
        }
        let d_all = d;
        let values = out.as_mut_slice();
        for (i, slot) in grid.iter().enumerate() {
            values[i * d_all + c] = slot.re;
        }
    }
    counters::free_bytes(((grid.len() + scratch.len() + column.len()) * complex_size) as u64);
    Ok(out)
}

/// Circular cross-correlation via the frequency domain, default 2D mode.
///
/// A = IFFT(FFT(q) * conj(FFT(k))), computed independently per channel.
pub fn spectral_correlate<T: Real>(q: &FeatureMap<T>, k: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    spectral_correlate_mode(q, k, FftMode::TwoDim)
}

pub fn spectral_correlate_mode<T: Real>(
    q: &FeatureMap<T>,
    k: &FeatureMap<T>,
    mode: FftMode,
) -> Result<FeatureMap<T>> {
    if !q.same_shape(k) {
        return Err(Error::ShapeMismatch(format!(
            "correlate wants equal shapes, got {}x{}x{} vs {}x{}x{}",
            q.height(),
            q.width(),
            q.channels(),
            k.height(),
            k.width(),
            k.channels()
        )));
    }
    let qs = fft_forward_mode(q, mode);
    let ks = fft_forward_mode(k, mode);
    let mut product = qs;
    for (p, kv) in product.data.iter_mut().zip(&ks.data) {
        *p = Complex::new(p.re * kv.re + p.im * kv.im, p.im * kv.re - p.re * kv.im);
    }
    counters::add_multiplies(4 * product.data.len() as u64);
    fft_inverse(&product)
}

/// Circular cross-correlation by direct summation, default 2D mode.
///
/// A[m] = sum_n q[n + m] k[n] with spatial indices wrapped modulo the
/// extents, per channel. Quadratic in the number of positions by
/// construction; this is the independent reference for
/// [`spectral_correlate`].
pub fn naive_correlate<T: Real>(q: &FeatureMap<T>, k: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    naive_correlate_mode(q, k, FftMode::TwoDim)
}

pub fn naive_correlate_mode<T: Real>(
    q: &FeatureMap<T>,
    k: &FeatureMap<T>,
    mode: FftMode,
) -> Result<FeatureMap<T>> {
    if !q.same_shape(k) {
        return Err(Error::ShapeMismatch(format!(
            "correlate wants equal shapes, got {}x{}x{} vs {}x{}x{}",
            q.height(),
            q.width(),
            q.channels(),
            k.height(),
            k.width(),
            k.channels()
        )));
    }
    let d = q.channels();
    let mut out = FeatureMap::zeros(q.height(), q.width(), d)?;
    counters::alloc_bytes(std::mem::size_of_val(out.as_slice()) as u64);
    match mode {
        FftMode::TwoDim => {
            let (h, w) = (q.height(), q.width());
            for c in 0..d {
                for my in 0..h {
                    for mx in 0..w {
                        let mut acc = T::zero();
                        for ny in 0..h {
                            let sy = (ny + my) % h;
                            for nx in 0..w {
                                let sx = (nx + mx) % w;
                                acc += q.get(sy, sx, c) * k.get(ny, nx, c);
                            }
                        }
                        out.set(my, mx, c, acc);
                    }
                }
                counters::add_multiplies((h * w) as u64 * (h * w) as u64);
            }
        }
        FftMode::Flattened => {
            let n = q.height() * q.width();
            let qv = q.as_slice();
            let kv = k.as_slice();
            let ov = out.as_mut_slice();
            for c in 0..d {
                for m in 0..n {
                    let mut acc = T::zero();
                    for j in 0..n {
                        acc += qv[((j + m) % n) * d + c] * kv[j * d + c];
                    }
                    ov[m * d + c] = acc;
                }
                counters::add_multiplies(n as u64 * n as u64);
            }
        }
    }
    Ok(out)
}
