//! Cross-checks between the fast paths and their independent references:
//! FFT round trips over every extent, Parseval through the half-spectrum,
//! spectral vs direct correlation over seeded shapes, attention pipelines
//! against the composition of direct-summation correlation with the shared
//! primitives, and the instrumented operation-count asymptotics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specfuse_core::attention::{
    fourier_cross_attention, fourier_self_attention, project_qkv, AttentionParams,
    CrossAttentionParams,
};
use specfuse_core::counters;
use specfuse_core::nn::{conv2d, layer_norm};
use specfuse_core::spectral::{fft_forward, fft_inverse, naive_correlate, spectral_correlate};
use specfuse_core::tensor::{relative_error, FeatureMap};

#[test]
fn fft_round_trip_identity_on_every_extent() {
    // Every width in 4..=256 as a single row, including primes.
    for w in 4..=256usize {
        let x = FeatureMap::<f64>::seeded(1, w, 1, w as u64).unwrap();
        let back = fft_inverse(&fft_forward(&x)).unwrap();
        assert!(
            relative_error(&x, &back) <= 1e-12,
            "row extent {w} failed round trip"
        );
    }
    // Assorted 2D extents, odd/even/prime mixes.
    for &(h, w) in &[
        (4, 4),
        (5, 7),
        (12, 18),
        (16, 16),
        (31, 29),
        (33, 64),
        (60, 60),
        (97, 11),
        (128, 128),
        (251, 3),
        (255, 256),
    ] {
        let x = FeatureMap::<f64>::seeded(h, w, 2, (h * 1000 + w) as u64).unwrap();
        let back = fft_inverse(&fft_forward(&x)).unwrap();
        assert!(
            relative_error(&x, &back) <= 1e-12,
            "2D extent {h}x{w} failed round trip"
        );
    }
}

#[test]
fn parseval_holds_on_seeded_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for case in 0..50 {
        let h = rng.random_range(1..=40);
        let w = rng.random_range(1..=40);
        let d = rng.random_range(1..=3);
        let x = FeatureMap::<f64>::seeded(h, w, d, 9000 + case).unwrap();
        let s = fft_forward(&x);
        let n = (h * w) as f64;
        for c in 0..d {
            let spatial: f64 = x
                .as_slice()
                .iter()
                .skip(c)
                .step_by(d)
                .map(|&v| v * v)
                .sum();
            let spectral: f64 = s.full_spectrum(c).iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
            let rel = (spatial - spectral).abs() / spatial.max(1e-300);
            assert!(rel <= 1e-5, "case {case} channel {c}: relative gap {rel}");
        }
    }
}

#[test]
fn spectral_matches_naive_on_fifty_seeded_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    // Corner shapes first, then random draws across the full range.
    let mut shapes = vec![(1, 1, 1), (1, 32, 1), (32, 1, 1), (32, 32, 4), (31, 29, 3)];
    while shapes.len() < 50 {
        shapes.push((
            rng.random_range(1..=32),
            rng.random_range(1..=32),
            rng.random_range(1..=4),
        ));
    }
    for (i, (h, w, d)) in shapes.into_iter().enumerate() {
        let q = FeatureMap::<f64>::seeded(h, w, d, 7000 + i as u64).unwrap();
        let k = FeatureMap::<f64>::seeded(h, w, d, 8000 + i as u64).unwrap();
        let fast = spectral_correlate(&q, &k).unwrap();
        let slow = naive_correlate(&q, &k).unwrap();
        let err = relative_error(&fast, &slow);
        assert!(err <= 1e-4, "shape {h}x{w}x{d} (case {i}): error {err}");
    }
}

/// Attention assembled from the quadratic correlation reference.
fn reference_attention(
    q: &FeatureMap<f64>,
    k: &FeatureMap<f64>,
    v: &FeatureMap<f64>,
    residual: &FeatureMap<f64>,
    p: &AttentionParams<f64>,
) -> FeatureMap<f64> {
    let attn = naive_correlate(q, k).unwrap();
    let gated = layer_norm(&attn, &p.norm).unwrap().hadamard(v).unwrap();
    residual.add(&conv2d(&gated, &p.out).unwrap()).unwrap()
}

#[test]
fn attention_pipelines_match_naive_composition_on_all_small_shapes() {
    let mut seed = 0u64;
    for &(h, w) in &[(1usize, 1usize), (2, 3), (4, 4), (5, 7), (8, 8), (16, 16), (16, 15)] {
        for d in [1usize, 2, 4] {
            seed += 1;
            let fr = FeatureMap::<f64>::seeded(h, w, d, 100 + seed).unwrap();
            let fd = FeatureMap::<f64>::seeded(h, w, d, 200 + seed).unwrap();
            let sp = AttentionParams::seeded(d, 300 + seed).unwrap();
            let cp = CrossAttentionParams::seeded(d, 400 + seed).unwrap();

            let fast = fourier_self_attention(&fr, &sp).unwrap();
            let (q, k, v) = project_qkv(&fr, &sp).unwrap();
            let slow = reference_attention(&q, &k, &v, &fr, &sp);
            let err = relative_error(&fast, &slow);
            assert!(err <= 1e-5, "self-attention {h}x{w}x{d}: error {err}");

            let (fast_r, fast_d) = fourier_cross_attention(&fr, &fd, &cp).unwrap();
            let (q_r, k_r, v_r) = project_qkv(&fr, &cp.rgb).unwrap();
            let (q_d, k_d, v_d) = project_qkv(&fd, &cp.depth).unwrap();
            let slow_r = reference_attention(&q_d, &k_r, &v_r, &fr, &cp.rgb);
            let slow_d = reference_attention(&q_r, &k_d, &v_d, &fd, &cp.depth);
            assert!(relative_error(&fast_r, &slow_r) <= 1e-5);
            assert!(relative_error(&fast_d, &slow_d) <= 1e-5);
        }
    }
}

#[test]
fn attention_identity_invariant_holds_for_zeroed_projections() {
    for &(h, w, d) in &[(4usize, 4usize, 1usize), (8, 8, 2), (16, 16, 4), (3, 5, 2)] {
        let fr = FeatureMap::<f64>::seeded(h, w, d, 600).unwrap();
        let fd = FeatureMap::<f64>::seeded(h, w, d, 601).unwrap();
        let out = fourier_self_attention(&fr, &AttentionParams::zeroed(d).unwrap()).unwrap();
        assert_eq!(out.as_slice(), fr.as_slice());
        let (or, od) =
            fourier_cross_attention(&fr, &fd, &CrossAttentionParams::zeroed(d).unwrap()).unwrap();
        assert_eq!(or.as_slice(), fr.as_slice());
        assert_eq!(od.as_slice(), fd.as_slice());
    }
}

#[test]
fn multiply_counters_scale_as_predicted() {
    let d = 2usize;
    let mut spectral_counts = Vec::new();
    let mut naive_counts = Vec::new();
    for n in [64usize, 256, 1024] {
        let side = (n as f64).sqrt() as usize;
        let q = FeatureMap::<f64>::seeded(side, side, d, 1).unwrap();
        let k = FeatureMap::<f64>::seeded(side, side, d, 2).unwrap();
        counters::reset();
        spectral_correlate(&q, &k).unwrap();
        spectral_counts.push((n, counters::multiplies()));
        counters::reset();
        naive_correlate(&q, &k).unwrap();
        naive_counts.push((n, counters::multiplies()));
    }
    // The direct path executes exactly D * N^2 multiplies: quadrupling N
    // multiplies the count by 16.
    for &(n, c) in &naive_counts {
        assert_eq!(c, (d * n * n) as u64);
    }
    // The spectral path tracks D * N log N: the growth ratio between
    // quadrupled sizes approaches 4 * log(4N)/log(N).
    for pair in spectral_counts.windows(2) {
        let (n1, c1) = pair[0];
        let (n2, c2) = pair[1];
        let measured = c2 as f64 / c1 as f64;
        let predicted = (n2 as f64 * (n2 as f64).ln()) / (n1 as f64 * (n1 as f64).ln());
        let rel = (measured / predicted - 1.0).abs();
        assert!(
            rel <= 0.15,
            "spectral growth {n1}->{n2}: measured {measured:.3}, predicted {predicted:.3}"
        );
    }
}
