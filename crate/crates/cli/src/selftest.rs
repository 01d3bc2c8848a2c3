//! Built-in verification suite: every fast path is checked against its
//! independent reference at the library's stated tolerances. Exits nonzero
//! if any check fails; this is the CI entry point.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specfuse_core::attention::{
    fourier_cross_attention, fourier_self_attention, project_qkv, AttentionParams,
    CrossAttentionParams,
};
use specfuse_core::distill::{
    distill_descent_demo, grad_distill, loss_channel, loss_l2, loss_spatial, loss_total_distill,
    DistillationParams, DistillationWeights,
};
use specfuse_core::ekf::{ekf_predict, ekf_update, ControlInput, EkfState, MeasurementModel};
use specfuse_core::geometry::{flow_loss, pose_loss, se3_exp, se3_log, FlowField, LossConfig, Pose};
use specfuse_core::nn::{conv2d, layer_norm};
use specfuse_core::spectral::{fft_forward, fft_inverse, naive_correlate, spectral_correlate};
use specfuse_core::tensor::{relative_error, FeatureMap};
use specfuse_core::trajectory::{accumulation_error, ate_rmse, Trajectory};
use specfuse_core::{Error, Result};

type Check = (&'static str, fn() -> Result<()>);

pub fn run() -> Result<()> {
    let checks: Vec<Check> = vec![
        ("1 fft round-trip and Parseval", check_fft),
        ("2 spectral vs direct correlation", check_correlation),
        ("3 attention identity and oracle parity", check_attention),
        ("4 distillation gradients and descent", check_distillation),
        ("5 hand-computed loss values", check_hand_losses),
        ("6 se3 exp/log round-trip", check_se3),
        ("7 ekf posterior and covariance", check_ekf),
        ("8 trajectory metrics", check_metrics),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("[ok]   {name}"),
            Err(e) => {
                println!("[FAIL] {name}: {e}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} selftest check(s) failed")));
    }
    println!("selftest: all checks passed");
    Ok(())
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Numerical(msg.into()))
    }
}

fn check_fft() -> Result<()> {
    for w in 4..=256usize {
        let x = FeatureMap::<f64>::seeded(1, w, 1, w as u64)?;
        let back = fft_inverse(&fft_forward(&x))?;
        ensure(
            relative_error(&x, &back) <= 1e-12,
            format!("round trip failed at extent {w}"),
        )?;
    }
    for &(h, w) in &[(5usize, 7usize), (16, 16), (31, 29), (60, 60), (97, 11)] {
        let x = FeatureMap::<f64>::seeded(h, w, 2, (h * 997 + w) as u64)?;
        let back = fft_inverse(&fft_forward(&x))?;
        ensure(
            relative_error(&x, &back) <= 1e-12,
            format!("round trip failed at {h}x{w}"),
        )?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..50u64 {
        let h = rng.random_range(1..=32);
        let w = rng.random_range(1..=32);
        let x = FeatureMap::<f64>::seeded(h, w, 1, 5000 + case)?;
        let s = fft_forward(&x);
        let spatial: f64 = x.as_slice().iter().map(|&v| v * v).sum();
        let spectral: f64 =
            s.full_spectrum(0).iter().map(|v| v.norm_sqr()).sum::<f64>() / (h * w) as f64;
        ensure(
            (spatial - spectral).abs() / spatial.max(1e-300) <= 1e-5,
            format!("Parseval failed on case {case} ({h}x{w})"),
        )?;
    }
    Ok(())
}

fn check_correlation() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..50u64 {
        let (h, w, d) = match case {
            0 => (1, 1, 1),
            1 => (32, 32, 4),
            2 => (1, 32, 2),
            3 => (31, 29, 3),
            _ => (
                rng.random_range(1..=32),
                rng.random_range(1..=32),
                rng.random_range(1..=4),
            ),
        };
        let q = FeatureMap::<f64>::seeded(h, w, d, 6000 + case)?;
        let k = FeatureMap::<f64>::seeded(h, w, d, 6500 + case)?;
        let fast = spectral_correlate(&q, &k)?;
        let slow = naive_correlate(&q, &k)?;
        let err = relative_error(&fast, &slow);
        ensure(
            err <= 1e-4,
            format!("case {case} ({h}x{w}x{d}): relative error {err:.3e}"),
        )?;
    }
    Ok(())
}

fn check_attention() -> Result<()> {
    for &(h, w, d) in &[(4usize, 4usize, 2usize), (8, 8, 4), (16, 16, 4), (16, 15, 3)] {
        let fr = FeatureMap::<f64>::seeded(h, w, d, 700)?;
        let fd = FeatureMap::<f64>::seeded(h, w, d, 701)?;

        let out = fourier_self_attention(&fr, &AttentionParams::zeroed(d)?)?;
        ensure(
            out.as_slice() == fr.as_slice(),
            format!("zeroed self-attention not identity at {h}x{w}x{d}"),
        )?;
        let (or, od) = fourier_cross_attention(&fr, &fd, &CrossAttentionParams::zeroed(d)?)?;
        ensure(
            or.as_slice() == fr.as_slice() && od.as_slice() == fd.as_slice(),
            format!("zeroed cross-attention not identity at {h}x{w}x{d}"),
        )?;

        let sp = AttentionParams::seeded(d, 811)?;
        let fast = fourier_self_attention(&fr, &sp)?;
        let (q, k, v) = project_qkv(&fr, &sp)?;
        let attn = naive_correlate(&q, &k)?;
        let gated = layer_norm(&attn, &sp.norm)?.hadamard(&v)?;
        let slow = fr.add(&conv2d(&gated, &sp.out)?)?;
        let err = relative_error(&fast, &slow);
        ensure(
            err <= 1e-5,
            format!("self-attention oracle parity at {h}x{w}x{d}: {err:.3e}"),
        )?;
    }
    Ok(())
}

fn check_distillation() -> Result<()> {
    let h = 1e-5;
    let weights = DistillationWeights::default();
    for seed in 0..10u64 {
        let fr = FeatureMap::<f64>::seeded(4, 4, 3, 900 + seed)?;
        let fd = FeatureMap::<f64>::seeded(4, 4, 3, 950 + seed)?;
        let params = DistillationParams::identity(3);
        let g = grad_distill(&fr, &fd, &weights, &params)?;
        for i in 0..fd.as_slice().len() {
            let mut plus = fd.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = fd.clone();
            minus.as_mut_slice()[i] -= h;
            let fd_grad = (loss_total_distill(&fr, &plus, &weights, &params)?
                - loss_total_distill(&fr, &minus, &weights, &params)?)
                / (2.0 * h);
            let a = g.wrt_fd.as_slice()[i];
            let rel = (a - fd_grad).abs() / a.abs().max(fd_grad.abs()).max(1e-6);
            ensure(
                rel <= 1e-3,
                format!("gradient mismatch seed {seed} coord {i}: {a} vs {fd_grad}"),
            )?;
        }
    }
    let trace = distill_descent_demo(2, 200, 0.05)?;
    let initial = trace[0];
    let last = *trace.last().unwrap();
    ensure(
        last < 0.1 * initial,
        format!("descent reached {last}, initial {initial}"),
    )?;
    let good = trace.windows(2).filter(|w| w[1] <= w[0]).count();
    ensure(
        good as f64 >= 0.9 * (trace.len() - 1) as f64,
        "descent trace not monotone in 90% of steps",
    )?;
    Ok(())
}

fn check_hand_losses() -> Result<()> {
    let ones = FeatureMap::<f64>::new(2, 2, 1, vec![1.0; 4])?;
    let zeros = FeatureMap::<f64>::zeros(2, 2, 1)?;
    ensure((loss_l2(&ones, &zeros)? - 4.0).abs() <= 1e-9, "element loss != 4")?;

    let fr = FeatureMap::<f64>::new(1, 1, 2, vec![3.0, 4.0])?;
    let fd = FeatureMap::<f64>::new(1, 1, 2, vec![1.0, 1.0])?;
    let p = DistillationParams::identity(2);
    ensure(
        (loss_spatial(&fr, &fd, &p)? - 5.0).abs() <= 1e-9,
        "spatial loss != 5",
    )?;

    let fr = FeatureMap::<f64>::new(1, 2, 2, vec![1.0, 3.0, 5.0, 7.0])?;
    let fd = FeatureMap::<f64>::new(1, 2, 2, vec![0.0, 2.0, 1.0, 3.0])?;
    ensure(
        (loss_channel(&fr, &fd, &p)? - 5.0).abs() <= 1e-9,
        "channel loss != 5",
    )?;

    let gt = FlowField::zeros(3, 4);
    let est = FlowField::uniform(3, 4, 3.0, 4.0);
    let cfg = LossConfig::default();
    ensure(
        (flow_loss(std::slice::from_ref(&est), &gt, &cfg)? - 5.0).abs() <= 1e-9,
        "flow loss != 5",
    )?;
    let half = LossConfig {
        gamma: 0.5,
        ..cfg
    };
    ensure(
        (flow_loss(&[est.clone(), est.clone(), est], &gt, &half)? - 8.75).abs() <= 1e-9,
        "flow loss != 8.75",
    )?;

    let gt_pose = vec![Pose::identity()];
    let est_pose = vec![Pose::identity()
        .with_translation(Vector3::new(-3.0, -4.0, 0.0))];
    ensure(
        (pose_loss(&[est_pose.clone(), est_pose], &gt_pose, &half)? - 7.5).abs() <= 1e-9,
        "pose loss gamma expansion != 7.5",
    )?;
    Ok(())
}

fn check_se3() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for case in 0..100 {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0f64),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let w = axis * angle;
        let xi = Vector6::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            w.x,
            w.y,
            w.z,
        );
        let back = se3_log(&se3_exp(&xi));
        ensure(
            (back - xi).norm() <= 1e-9,
            format!("exp/log round trip failed on case {case}"),
        )?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let gt: Vec<Pose> = (0..5)
        .map(|_| {
            se3_exp(&Vector6::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ))
        })
        .collect();
    let loss = pose_loss(std::slice::from_ref(&gt), &gt, &LossConfig::default())?;
    ensure(loss <= 1e-12, format!("pose loss at ground truth is {loss}"))?;
    Ok(())
}

fn check_ekf() -> Result<()> {
    let s = EkfState::new(Vector3::new(1.0, 1.0, 1.0), Matrix3::identity())?;
    let m = MeasurementModel::new(Matrix6::identity(), Matrix3::zeros())?;
    let d = Vector3::new(0.3, -0.6, 0.9);
    let z = Vector6::new(
        s.x.x + d.x,
        s.x.y + d.y,
        s.x.z + d.z,
        s.x.x + d.x,
        s.x.y + d.y,
        s.x.z + d.z,
    );
    let out = ekf_update(&s, &z, &m)?;
    ensure(
        (out.x - (s.x + d * (2.0 / 3.0))).norm() <= 1e-12,
        "duplicated-measurement posterior != x + (2/3) d",
    )?;

    let big = MeasurementModel::new(Matrix6::identity() * 1e9, Matrix3::zeros())?;
    let out = ekf_update(&s, &z, &big)?;
    ensure(
        (out.x - s.x).norm() <= 1e-6 * d.norm(),
        "large-noise update moved the state",
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let m = MeasurementModel::diagonal(0.01, 0.0004, 1e-4)?;
    let mut s = EkfState::new(Vector3::zeros(), Matrix3::identity() * 0.01)?;
    for step in 0..10_000 {
        let u = ControlInput(Vector3::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        ));
        s = ekf_predict(&s, &u, &m.r)?;
        let z = Vector6::new(
            s.x.x + rng.random_range(-0.2..0.2),
            s.x.y + rng.random_range(-0.2..0.2),
            s.x.z + rng.random_range(-0.2..0.2),
            s.x.x + rng.random_range(-0.05..0.05),
            s.x.y + rng.random_range(-0.05..0.05),
            s.x.z + rng.random_range(-0.05..0.05),
        );
        s = ekf_update(&s, &z, &m)?;
        ensure(
            (s.p - s.p.transpose()).norm() <= 1e-9,
            format!("covariance asymmetric at step {step}"),
        )?;
        let min_eig = s
            .p
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        ensure(
            min_eig >= -1e-9,
            format!("covariance not PSD at step {step}: {min_eig}"),
        )?;
    }
    Ok(())
}

fn check_metrics() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let traj = Trajectory::from_samples(
        (0..20)
            .map(|i| {
                (
                    i as f64 * 0.1,
                    Pose::identity().with_translation(Vector3::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                    )),
                )
            })
            .collect(),
    )?;
    ensure(ate_rmse(&traj, &traj, true, 0.02)? <= 1e-9, "ATE(t, t) != 0")?;

    let shift = Vector3::new(0.05, 0.0, 0.0);
    let est = Trajectory::from_samples(
        traj.iter()
            .map(|s| (s.t, s.pose.with_translation(s.pose.translation() + shift)))
            .collect(),
    )?;
    ensure(
        ate_rmse(&est, &traj, true, 0.02)? <= 1e-9,
        "aligned ATE did not absorb rigid offset",
    )?;
    let unaligned = ate_rmse(&est, &traj, false, 0.02)?;
    ensure(
        (unaligned - 5.0).abs() <= 1e-9,
        format!("unaligned 5 cm offset measured {unaligned}"),
    )?;

    // Loop-closure row: 0.09 m over 147.45 m rounds to 0.06%.
    let loop_traj = Trajectory::from_samples(vec![
        (0.0, Pose::identity()),
        (1.0, Pose::identity().with_translation(Vector3::new(70.0, 20.0, 0.0))),
        (2.0, Pose::identity().with_translation(Vector3::new(0.09, 0.0, 0.0))),
    ])?;
    let (err, pct) = accumulation_error(&loop_traj, 147.45)?;
    ensure((err - 0.09).abs() <= 1e-12, "accumulation error != 0.09")?;
    ensure(
        format!("{pct:.2}") == "0.06",
        format!("proportion {pct:.6} does not round to 0.06"),
    )?;
    Ok(())
}
