//! Scaling comparison between the spectral and direct correlation paths.
//!
//! For each requested spatial size the harness first checks that the two
//! methods agree numerically on the same seeded inputs (correctness precedes
//! speed, a disagreement aborts the run), then records wall time, executed
//! scalar multiplications, and peak tracked working-set bytes per repetition.
//! Timing uses the median over repetitions downstream; a warm-up run per
//! method is excluded from the rows.

use std::fmt;
use std::time::Instant;

use crate::counters;
use crate::error::{Error, Result};
use crate::spectral::{naive_correlate, spectral_correlate};
use crate::tensor::{relative_error, FeatureMap};

/// Correlation implementation under measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Spectral,
    Naive,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Spectral, Method::Naive];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Spectral => write!(f, "spectral"),
            Method::Naive => write!(f, "naive"),
        }
    }
}

/// One measured repetition.
#[derive(Debug, Clone)]
pub struct BenchRow {
    /// Total spatial positions (H * W).
    pub n: usize,
    pub channels: usize,
    pub method: Method,
    pub rep: usize,
    pub seconds: f64,
    pub multiplies: u64,
    pub bytes: u64,
}

/// All rows of one run, one per (size, method, repetition).
#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// CSV with the column layout `N,D,method,rep,seconds,multiplies,bytes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,D,method,rep,seconds,multiplies,bytes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.9},{},{}\n",
                r.n, r.channels, r.method, r.rep, r.seconds, r.multiplies, r.bytes
            ));
        }
        out
    }

    /// Median wall time per size for one method, sorted by size.
    pub fn median_seconds(&self, method: Method) -> Vec<(usize, f64)> {
        let mut sizes: Vec<usize> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.n)
            .collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|n| {
                let mut times: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.n == n)
                    .map(|r| r.seconds)
                    .collect();
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mid = times.len() / 2;
                let median = if times.len() % 2 == 1 {
                    times[mid]
                } else {
                    0.5 * (times[mid - 1] + times[mid])
                };
                (n, median)
            })
            .collect()
    }

    /// Multiply count per size for one method (identical across reps).
    pub fn multiply_counts(&self, method: Method) -> Vec<(usize, u64)> {
        let mut out: Vec<(usize, u64)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.method == method) {
            if !out.iter().any(|&(n, _)| n == r.n) {
                out.push((r.n, r.multiplies));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Bench configuration: channel count, repetitions per size, input seed.
#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub channels: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            channels: 2,
            reps: 3,
            seed: 0,
        }
    }
}

/// Split n into the most square H x W grid with H * W = n.
pub fn near_square_dims(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && !n.is_multiple_of(h) {
        h -= 1;
    }
    (h.max(1), n / h.max(1))
}

/// Run both correlation paths over the requested sizes.
///
/// Sizes are total spatial positions and must be >= 16; `reps >= 3`. The
/// equivalence gate compares the two methods at 1e-4 relative error on the
/// actual bench inputs before any timing is recorded.
pub fn run_bench(sizes: &[usize], cfg: &BenchConfig) -> Result<BenchReport> {
    if sizes.is_empty() {
        return Err(Error::InvalidParam("bench needs at least one size".into()));
    }
    if cfg.reps < 3 {
        return Err(Error::InvalidParam(format!(
            "bench needs reps >= 3, got {}",
            cfg.reps
        )));
    }
    if cfg.channels == 0 {
        return Err(Error::InvalidParam("bench needs channels >= 1".into()));
    }
    let mut report = BenchReport::default();
    for (si, &n) in sizes.iter().enumerate() {
        if n < 16 {
            return Err(Error::InvalidParam(format!("bench sizes must be >= 16, got {n}")));
        }
        let (h, w) = near_square_dims(n);
        let q = FeatureMap::<f64>::seeded(h, w, cfg.channels, cfg.seed ^ (si as u64) << 8)?;
        let k = FeatureMap::<f64>::seeded(h, w, cfg.channels, cfg.seed ^ (si as u64) << 8 | 1)?;

        let fast = spectral_correlate(&q, &k)?;
        let slow = naive_correlate(&q, &k)?;
        let err = relative_error(&fast, &slow);
        if err > 1e-4 {
            return Err(Error::Numerical(format!(
                "spectral and naive paths disagree at N = {n}: relative error {err:.3e}"
            )));
        }

        for method in Method::ALL {
            let run = |q: &FeatureMap<f64>, k: &FeatureMap<f64>| match method {
                Method::Spectral => spectral_correlate(q, k),
                Method::Naive => naive_correlate(q, k),
            };
            // Warm-up, excluded from the report.
            run(&q, &k)?;
            for rep in 0..cfg.reps {
                counters::reset();
                let start = Instant::now();
                let out = run(&q, &k)?;
                let seconds = start.elapsed().as_secs_f64();
                std::hint::black_box(&out);
                report.rows.push(BenchRow {
                    n,
                    channels: cfg.channels,
                    method,
                    rep,
                    seconds: seconds.max(1e-12),
                    multiplies: counters::multiplies(),
                    bytes: counters::peak_bytes(),
                });
            }
        }
    }
    Ok(report)
}

/// Least-squares slope of log(time) against log(N) per method, from the
/// median times. Needs at least four distinct sizes per method.
pub fn fit_scaling(report: &BenchReport) -> Result<Vec<(Method, f64)>> {
    let mut out = Vec::new();
    for method in Method::ALL {
        let medians = report.median_seconds(method);
        if medians.is_empty() {
            continue;
        }
        if medians.len() < 4 {
            return Err(Error::InvalidParam(format!(
                "scaling fit needs >= 4 distinct sizes for {method}, got {}",
                medians.len()
            )));
        }
        let pts: Vec<(f64, f64)> = medians
            .iter()
            .map(|&(n, t)| ((n as f64).ln(), t.ln()))
            .collect();
        let n = pts.len() as f64;
        let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in pts {
            num += (x - mean_x) * (y - mean_y);
            den += (x - mean_x) * (x - mean_x);
        }
        if den == 0.0 {
            return Err(Error::InvalidParam("scaling fit needs distinct sizes".into()));
        }
        out.push((method, num / den));
    }
    Ok(out)
}
