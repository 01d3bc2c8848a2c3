//! Central finite-difference verification of the analytic distillation
//! gradients. The parameter vector flattens both feature maps and both
//! learned maps; each coordinate is checked independently at h = 1e-5 in
//! 64-bit, away from the absolute-value kinks.

use specfuse_core::distill::{
    grad_distill, loss_total_distill, DistillationParams, DistillationWeights,
};
use specfuse_core::tensor::FeatureMap;

const H: usize = 4;
const W: usize = 4;
const D: usize = 3;

#[derive(Clone)]
struct Point {
    fr: FeatureMap<f64>,
    fd: FeatureMap<f64>,
    params: DistillationParams<f64>,
}

impl Point {
    fn seeded(seed: u64) -> Self {
        let mut params = DistillationParams::identity(D);
        // Move the learned maps off identity so their gradients are
        // exercised too.
        let tweak = FeatureMap::<f64>::seeded(1, 1, D * D + D + 2, seed + 13).unwrap();
        let t = tweak.as_slice();
        for (i, w) in params.phi_weight.iter_mut().enumerate() {
            *w += 0.3 * t[i];
        }
        for (i, b) in params.phi_bias.iter_mut().enumerate() {
            *b += 0.3 * t[D * D + i];
        }
        params.conv_weight += 0.3 * t[D * D + D];
        params.conv_bias += 0.3 * t[D * D + D + 1];
        Point {
            fr: FeatureMap::seeded(H, W, D, seed).unwrap(),
            fd: FeatureMap::seeded(H, W, D, seed + 7).unwrap(),
            params,
        }
    }

    fn dim() -> usize {
        2 * H * W * D + D * D + D + 2
    }

    fn get(&self, i: usize) -> f64 {
        let hw = H * W * D;
        if i < hw {
            self.fr.as_slice()[i]
        } else if i < 2 * hw {
            self.fd.as_slice()[i - hw]
        } else if i < 2 * hw + D * D {
            self.params.phi_weight[i - 2 * hw]
        } else if i < 2 * hw + D * D + D {
            self.params.phi_bias[i - 2 * hw - D * D]
        } else if i == 2 * hw + D * D + D {
            self.params.conv_weight
        } else {
            self.params.conv_bias
        }
    }

    fn set(&mut self, i: usize, v: f64) {
        let hw = H * W * D;
        if i < hw {
            self.fr.as_mut_slice()[i] = v;
        } else if i < 2 * hw {
            self.fd.as_mut_slice()[i - hw] = v;
        } else if i < 2 * hw + D * D {
            self.params.phi_weight[i - 2 * hw] = v;
        } else if i < 2 * hw + D * D + D {
            self.params.phi_bias[i - 2 * hw - D * D] = v;
        } else if i == 2 * hw + D * D + D {
            self.params.conv_weight = v;
        } else {
            self.params.conv_bias = v;
        }
    }

    fn loss(&self, w: &DistillationWeights<f64>) -> f64 {
        loss_total_distill(&self.fr, &self.fd, w, &self.params).unwrap()
    }

    fn analytic_gradient(&self, w: &DistillationWeights<f64>) -> Vec<f64> {
        let g = grad_distill(&self.fr, &self.fd, w, &self.params).unwrap();
        let mut flat = Vec::with_capacity(Self::dim());
        flat.extend_from_slice(g.wrt_fr.as_slice());
        flat.extend_from_slice(g.wrt_fd.as_slice());
        flat.extend_from_slice(&g.wrt_phi_weight);
        flat.extend_from_slice(&g.wrt_phi_bias);
        flat.push(g.wrt_conv_weight);
        flat.push(g.wrt_conv_bias);
        flat
    }
}

fn check_gradients(weights: DistillationWeights<f64>, seeds: std::ops::Range<u64>) {
    let h = 1e-5;
    for seed in seeds {
        let point = Point::seeded(seed);
        let analytic = point.analytic_gradient(&weights);
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = point.clone();
            plus.set(i, point.get(i) + h);
            let mut minus = point.clone();
            minus.set(i, point.get(i) - h);
            let fd = (plus.loss(&weights) - minus.loss(&weights)) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(
                rel <= 1e-3,
                "seed {seed} coordinate {i}: analytic {a} vs finite difference {fd} (rel {rel})"
            );
        }
    }
}

#[test]
fn element_loss_gradient_matches_finite_differences() {
    check_gradients(
        DistillationWeights {
            alpha: 1.0,
            beta: 0.0,
            delta: 0.0,
        },
        0..10,
    );
}

#[test]
fn spatial_loss_gradient_matches_finite_differences() {
    check_gradients(
        DistillationWeights {
            alpha: 0.0,
            beta: 1.0,
            delta: 0.0,
        },
        10..20,
    );
}

#[test]
fn channel_loss_gradient_matches_finite_differences() {
    check_gradients(
        DistillationWeights {
            alpha: 0.0,
            beta: 0.0,
            delta: 1.0,
        },
        20..30,
    );
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    check_gradients(DistillationWeights::default(), 30..40);
}
