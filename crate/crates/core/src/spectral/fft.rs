//! Mixed-radix complex FFT.
//!
//! Arbitrary lengths are handled by recursive Cooley-Tukey decomposition over
//! the prime factorization, with a direct DFT at prime base cases. Zero
//! padding is never used: circular correlation semantics require transforms
//! at the exact signal length. All twiddle factors are powers of the length-N
//! root of unity, precomputed once per plan from f64 trigonometry.
//!
//! The plan counts every complex multiplication it executes (4 scalar
//! multiplications each) through [`crate::counters`], which is what the
//! bench harness reports.

use num_complex::Complex;

use crate::counters;
use crate::real::Real;

/// Reusable transform plan for one length.
pub struct FftPlan<T: Real> {
    n: usize,
    factors: Vec<usize>,
    /// table[k] = exp(-2*pi*i*k/n) for k in 0..n.
    table: Vec<Complex<T>>,
}

fn factorize(mut n: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            factors.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        factors.push(n);
    }
    factors
}

impl<T: Real> FftPlan<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "transform length must be positive");
        let mut table = Vec::with_capacity(n);
        for k in 0..n {
            let angle = -2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
            let (s, c) = angle.sin_cos();
            table.push(Complex::new(T::from_f64(c), T::from_f64(s)));
        }
        counters::alloc_bytes((n * std::mem::size_of::<Complex<T>>()) as u64);
        FftPlan {
            n,
            factors: factorize(n),
            table,
        }
    }

    /// In-place forward DFT, unnormalized: X[k] = sum_j x[j] w^(jk).
    pub fn forward(&self, data: &mut [Complex<T>], scratch: &mut [Complex<T>]) {
        assert_eq!(data.len(), self.n);
        assert_eq!(scratch.len(), self.n);
        let mut complex_muls = 0u64;
        self.recurse(data, scratch, 1, &self.factors, &mut complex_muls);
        counters::add_multiplies(4 * complex_muls);
    }

    /// In-place inverse DFT including the 1/n normalization.
    ///
    /// Computed as conj(forward(conj(x)))/n so both directions share one
    /// code path and one operation-count model.
    pub fn inverse(&self, data: &mut [Complex<T>], scratch: &mut [Complex<T>]) {
        for v in data.iter_mut() {
            *v = v.conj();
        }
        self.forward(data, scratch);
        let inv_n = T::one() / T::from_f64(self.n as f64);
        for v in data.iter_mut() {
            *v = Complex::new(v.re * inv_n, -v.im * inv_n);
        }
        counters::add_multiplies(2 * self.n as u64);
    }

    /// One decomposition level: split length p*m into p interleaved
    /// subsequences of length m, transform each, then recombine with
    /// twiddles and a direct p-point DFT across the rows.
    fn recurse(
        &self,
        data: &mut [Complex<T>],
        scratch: &mut [Complex<T>],
        stride: usize,
        factors: &[usize],
        muls: &mut u64,
    ) {
        let n = data.len();
        if n == 1 {
            return;
        }
        let p = factors[0];
        let m = n / p;

        if m == 1 {
            // Prime base case: direct p-point DFT.
            scratch[..n].copy_from_slice(data);
            for (k, out) in data.iter_mut().enumerate() {
                let mut acc = scratch[0];
                for (j, &src) in scratch.iter().enumerate().take(p).skip(1) {
                    let tw = self.table[(j * k * stride) % self.n];
                    acc += src * tw;
                    *muls += 1;
                }
                *out = acc;
            }
            return;
        }

        // Gather: row r of scratch holds the subsequence with residue r.
        for r in 0..p {
            for i in 0..m {
                scratch[r * m + i] = data[i * p + r];
            }
        }
        // Sub-transforms, reusing the data rows as sub-scratch.
        for r in 0..p {
            self.recurse(
                &mut scratch[r * m..(r + 1) * m],
                &mut data[r * m..(r + 1) * m],
                stride * p,
                &factors[1..],
                muls,
            );
        }
        // Twiddle each row element, then DFT of length p down the rows.
        let mut column = vec![Complex::new(T::zero(), T::zero()); p];
        for k1 in 0..m {
            for (r, slot) in column.iter_mut().enumerate() {
                let idx = (r * k1 * stride) % self.n;
                if idx == 0 {
                    *slot = scratch[r * m + k1];
                } else {
                    *slot = scratch[r * m + k1] * self.table[idx];
                    *muls += 1;
                }
            }
            if p == 2 {
                data[k1] = column[0] + column[1];
                data[k1 + m] = column[0] - column[1];
            } else {
                for k2 in 0..p {
                    let mut acc = column[0];
                    for (r, &v) in column.iter().enumerate().skip(1) {
                        let idx = (r * k2 * m * stride) % self.n;
                        if idx == 0 {
                            acc += v;
                        } else {
                            acc += v * self.table[idx];
                            *muls += 1;
                        }
                    }
                    data[k1 + k2 * m] = acc;
                }
            }
        }
    }
}

impl<T: Real> Drop for FftPlan<T> {
    fn drop(&mut self) {
        counters::free_bytes((self.n * std::mem::size_of::<Complex<T>>()) as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(n^2) DFT straight from the definition.
    fn dft_reference(input: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let n = input.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (j, v) in input.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (j * k % n) as f64 / n as f64;
                    acc += v * Complex::new(ang.cos(), ang.sin());
                }
                acc
            })
            .collect()
    }

    fn max_err(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn matches_definition_on_assorted_lengths() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for n in [1usize, 2, 3, 4, 5, 6, 8, 9, 12, 16, 17, 30, 31, 49, 60, 64, 97, 128, 251] {
            let input: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let plan = FftPlan::new(n);
            let mut data = input.clone();
            let mut scratch = vec![Complex::new(0.0, 0.0); n];
            plan.forward(&mut data, &mut scratch);
            let want = dft_reference(&input);
            assert!(
                max_err(&data, &want) < 1e-10 * (n as f64),
                "length {n} diverged from the DFT definition"
            );
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3, 7, 24, 36, 100, 125, 243] {
            let input: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let plan = FftPlan::new(n);
            let mut data = input.clone();
            let mut scratch = vec![Complex::new(0.0, 0.0); n];
            plan.forward(&mut data, &mut scratch);
            plan.inverse(&mut data, &mut scratch);
            assert!(max_err(&data, &input) < 1e-12, "round trip failed at n={n}");
        }
    }

    #[test]
    fn multiply_counts_are_deterministic() {
        let plan = FftPlan::<f64>::new(48);
        let run = || {
            counters::reset();
            let mut data = vec![Complex::new(1.0, 0.5); 48];
            let mut scratch = vec![Complex::new(0.0, 0.0); 48];
            plan.forward(&mut data, &mut scratch);
            counters::multiplies()
        };
        let a = run();
        let b = run();
        assert!(a > 0);
        assert_eq!(a, b);
    }
}
