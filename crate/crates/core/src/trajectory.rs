//! Trajectory I/O, time association, rigid alignment, and evaluation
//! metrics: ATE, flow accuracy (ACC_1px / AEPE), pose accuracy within
//! rotation/translation thresholds, and loop accumulation error.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{FlowField, Pose};

/// One time-stamped pose.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose,
}

/// Time-ordered pose sequence; timestamps are strictly ascending.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn from_samples(samples: Vec<(f64, Pose)>) -> Result<Self> {
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParam(format!(
                    "timestamps must ascend strictly: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((t, _)) = samples.iter().find(|(t, _)| !t.is_finite()) {
            return Err(Error::InvalidParam(format!("non-finite timestamp {t}")));
        }
        Ok(Trajectory {
            samples: samples
                .into_iter()
                .map(|(t, pose)| TrajectorySample { t, pose })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> &TrajectorySample {
        &self.samples[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrajectorySample> {
        self.samples.iter()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples
            .iter()
            .map(|s| *s.pose.translation())
            .collect()
    }
}

/// Parse TUM trajectory text: `t tx ty tz qx qy qz qw` per line, `#`
/// comments allowed. Quaternions must be within 1e-3 of unit norm and are
/// normalized on load.
pub fn parse_tum(text: &str, path: &str) -> Result<Trajectory> {
    let mut samples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 8];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("not a number: `{f}`"),
            })?;
        }
        let pose = Pose::from_quaternion(
            Vector3::new(vals[1], vals[2], vals[3]),
            vals[4],
            vals[5],
            vals[6],
            vals[7],
        )
        .map_err(|e| Error::Parse {
            path: path.into(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if let Some(prev) = samples.last() {
            let (pt, _): &(f64, Pose) = prev;
            if vals[0] <= *pt {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    msg: format!("timestamp {} not ascending", vals[0]),
                });
            }
        }
        samples.push((vals[0], pose));
    }
    Trajectory::from_samples(samples)
}

pub fn load_tum<P: AsRef<Path>>(path: P) -> Result<Trajectory> {
    let text = std::fs::read_to_string(&path)?;
    parse_tum(&text, &path.as_ref().display().to_string())
}

/// Serialize in TUM format with nine decimal places.
pub fn format_tum(traj: &Trajectory) -> String {
    let mut out = String::new();
    for s in traj.iter() {
        let t = s.pose.translation();
        let (qx, qy, qz, qw) = s.pose.to_quaternion();
        out.push_str(&format!(
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
            s.t, t.x, t.y, t.z, qx, qy, qz, qw
        ));
    }
    out
}

pub fn save_tum<P: AsRef<Path>>(traj: &Trajectory, path: P) -> Result<()> {
    std::fs::write(path, format_tum(traj))?;
    Ok(())
}

/// Greedy nearest-timestamp matching: candidate pairs within `max_dt` are
/// taken in order of |dt|, each sample used at most once.
pub fn associate(a: &Trajectory, b: &Trajectory, max_dt: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, sa) in a.iter().enumerate() {
        for (j, sb) in b.iter().enumerate() {
            let dt = (sa.t - sb.t).abs();
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Rigid (optionally scaled) registration of two matched point sets.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn identity() -> Self {
        Alignment {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Closed-form least-squares transform minimizing
/// sum |gt - (s R est + t)|^2 over rotations (and scale when enabled).
///
/// Requires at least three pairs and a point covariance of rank >= 2;
/// collinear configurations are rejected.
pub fn umeyama_align(
    est: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    with_scale: bool,
) -> Result<Alignment> {
    if est.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimated vs {} ground-truth points",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 3 {
        return Err(Error::Degenerate(format!(
            "alignment needs >= 3 point pairs, got {}",
            est.len()
        )));
    }
    let n = est.len() as f64;
    let mean_e: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / n;
    let mean_g: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let de = e - mean_e;
        let dg = g - mean_g;
        cov += dg * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let sv = svd.singular_values;
    if sv[1] <= sv[0].max(1e-300) * 1e-9 {
        return Err(Error::Degenerate(
            "point covariance rank < 2 (collinear configuration)".into(),
        ));
    }
    let mut s_mat = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s_mat[(2, 2)] = -1.0;
    }
    let rotation = u * s_mat * v_t;
    let scale = if with_scale {
        if var_e <= 0.0 {
            return Err(Error::Degenerate("zero-variance estimate points".into()));
        }
        (sv[0] * s_mat[(0, 0)] + sv[1] * s_mat[(1, 1)] + sv[2] * s_mat[(2, 2)]) / var_e
    } else {
        1.0
    };
    let translation = mean_g - rotation * mean_e * scale;
    Ok(Alignment {
        rotation,
        translation,
        scale,
    })
}

/// Absolute trajectory error in centimeters: associate, optionally align
/// (rigid, scale off), then the RMSE of translational residuals.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, align: bool, max_dt: f64) -> Result<f64> {
    if max_dt <= 0.0 {
        return Err(Error::InvalidParam("max_dt must be positive".into()));
    }
    let pairs = associate(est, gt, max_dt);
    if pairs.len() < 3 {
        return Err(Error::Degenerate(format!(
            "ATE needs >= 3 associated pairs, got {}",
            pairs.len()
        )));
    }
    let est_pts: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(i, _)| *est.get(i).pose.translation())
        .collect();
    let gt_pts: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(_, j)| *gt.get(j).pose.translation())
        .collect();
    let transform = if align {
        umeyama_align(&est_pts, &gt_pts, false)?
    } else {
        Alignment::identity()
    };
    let mut sum_sq = 0.0;
    for (e, g) in est_pts.iter().zip(&gt_pts) {
        sum_sq += (g - transform.apply(e)).norm_squared();
    }
    let rmse_m = (sum_sq / est_pts.len() as f64).sqrt();
    Ok(rmse_m * 100.0)
}

/// Flow accuracy: percentage of pixels with end-point error <= 1 pixel, and
/// the mean end-point error in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    pub acc_1px: f64,
    pub aepe: f64,
}

pub fn flow_metrics(est: &FlowField, gt: &FlowField) -> Result<FlowMetrics> {
    if !est.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            est.height(),
            est.width(),
            gt.height(),
            gt.width()
        )));
    }
    let n = gt.pixels();
    let mut within = 0usize;
    let mut sum = 0.0;
    for i in 0..n {
        let (ue, ve) = est.get(i);
        let (ug, vg) = gt.get(i);
        let epe = ((ue - ug).powi(2) + (ve - vg).powi(2)).sqrt();
        if epe <= 1.0 {
            within += 1;
        }
        sum += epe;
    }
    Ok(FlowMetrics {
        acc_1px: within as f64 / n as f64 * 100.0,
        aepe: sum / n as f64,
    })
}

/// Pose accuracy: percentage of rotation errors within `rot_thresh_deg`
/// degrees and translation errors within `tra_thresh_m` meters. Rotation
/// error is the angle of est' * gt via the trace formula.
pub fn pose_metrics(
    est: &[Pose],
    gt: &[Pose],
    rot_thresh_deg: f64,
    tra_thresh_m: f64,
) -> Result<(f64, f64)> {
    if est.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimated vs {} ground-truth poses",
            est.len(),
            gt.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::InvalidParam("pose metrics need at least one pose".into()));
    }
    let mut rot_ok = 0usize;
    let mut tra_ok = 0usize;
    for (e, g) in est.iter().zip(gt) {
        let rel = e.rotation().transpose() * g.rotation();
        let angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        if angle.to_degrees() <= rot_thresh_deg {
            rot_ok += 1;
        }
        if (e.translation() - g.translation()).norm() <= tra_thresh_m {
            tra_ok += 1;
        }
    }
    let n = est.len() as f64;
    Ok((rot_ok as f64 / n * 100.0, tra_ok as f64 / n * 100.0))
}

/// End-to-start position gap of a nominally closed loop, in meters, and its
/// percentage of the loop length.
pub fn accumulation_error(traj: &Trajectory, loop_length_m: f64) -> Result<(f64, f64)> {
    if traj.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "accumulation error needs >= 2 samples, got {}",
            traj.len()
        )));
    }
    if loop_length_m <= 0.0 {
        return Err(Error::InvalidParam("loop length must be positive".into()));
    }
    let first = traj.get(0).pose.translation();
    let last = traj.get(traj.len() - 1).pose.translation();
    let error = (last - first).norm();
    Ok((error, error / loop_length_m * 100.0))
}

/// Bundle of evaluation results; fields are filled by whichever metrics ran.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub ate_rmse_cm: Option<f64>,
    pub acc_1px_pct: Option<f64>,
    pub aepe_px: Option<f64>,
    pub rot_within_pct: Option<f64>,
    pub tra_within_pct: Option<f64>,
    pub accumulation_error_m: Option<f64>,
    pub proportion_pct: Option<f64>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("acc_1px", self.acc_1px_pct),
            ("rot_within", self.rot_within_pct),
            ("tra_within", self.tra_within_pct),
            ("proportion", self.proportion_pct),
        ] {
            if let Some(v) = v {
                if !(0.0..=100.0).contains(&v) {
                    return Err(Error::InvalidParam(format!(
                        "{name} must lie in [0, 100], got {v}"
                    )));
                }
            }
        }
        for (name, v) in [
            ("ate_rmse", self.ate_rmse_cm),
            ("aepe", self.aepe_px),
            ("accumulation_error", self.accumulation_error_m),
        ] {
            if let Some(v) = v {
                if v.is_nan() || v < 0.0 {
                    return Err(Error::InvalidParam(format!("{name} must be >= 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Two-line CSV: header plus one row; absent metrics are empty cells.
    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.6}")).unwrap_or_default()
        }
        format!(
            "ate_rmse_cm,acc_1px_pct,aepe_px,rot_within_pct,tra_within_pct,accumulation_error_m,proportion_pct\n{},{},{},{},{},{},{}\n",
            cell(self.ate_rmse_cm),
            cell(self.acc_1px_pct),
            cell(self.aepe_px),
            cell(self.rot_within_pct),
            cell(self.tra_within_pct),
            cell(self.accumulation_error_m),
            cell(self.proportion_pct),
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, Option<f64>, &str); 7] = [
            ("ATE RMSE", self.ate_rmse_cm, "cm"),
            ("ACC_1px", self.acc_1px_pct, "%"),
            ("AEPE", self.aepe_px, "px"),
            ("Rot within", self.rot_within_pct, "%"),
            ("Tra within", self.tra_within_pct, "%"),
            ("Accumulation error", self.accumulation_error_m, "m"),
            ("Proportion", self.proportion_pct, "%"),
        ];
        for (name, v, unit) in rows {
            if let Some(v) = v {
                writeln!(f, "{name}: {v:.3} {unit}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;
    use nalgebra::Vector6;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..2.0);
        let w = axis * angle;
        se3_exp(&Vector6::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            w.x,
            w.y,
            w.z,
        ))
    }

    fn random_trajectory(n: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Trajectory::from_samples(
            (0..n)
                .map(|i| (i as f64 * 0.1, random_pose(&mut rng)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tum_round_trip_preserves_poses() {
        let traj = random_trajectory(100, 8);
        let text = format_tum(&traj);
        let back = parse_tum(&text, "mem").unwrap();
        assert_eq!(back.len(), traj.len());
        for (a, b) in traj.iter().zip(back.iter()) {
            assert!((a.t - b.t).abs() < 1e-8);
            assert!((a.pose.translation() - b.pose.translation()).norm() < 1e-8);
            assert!((a.pose.rotation() - b.pose.rotation()).norm() < 1e-8);
        }
    }

    #[test]
    fn tum_identity_line_parses() {
        let traj = parse_tum("0.0 0 0 0 0 0 0 1\n", "mem").unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.get(0).t, 0.0);
        assert_eq!(traj.get(0).pose.rotation(), &Matrix3::identity());
        assert_eq!(traj.get(0).pose.translation(), &Vector3::zeros());
    }

    #[test]
    fn tum_rejects_malformed_input() {
        // Seven fields.
        let err = parse_tum("0.0 0 0 0 0 0 1\n", "mem").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        // Non-unit quaternion.
        assert!(parse_tum("0.0 0 0 0 0 0 0 2\n", "mem").is_err());
        // Non-ascending timestamps.
        assert!(parse_tum("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n", "mem").is_err());
        // Comments and blank lines are fine.
        let ok = parse_tum("# header\n\n0.5 1 2 3 0 0 0 1\n", "mem").unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn associate_matches_by_nearest_time() {
        let a = random_trajectory(10, 1);
        let pairs = associate(&a, &a, 0.02);
        assert_eq!(pairs.len(), 10);
        assert!(pairs.iter().all(|&(i, j)| i == j));

        // Uniform offset below the window: all matched.
        let shifted = Trajectory::from_samples(
            a.iter().map(|s| (s.t + 0.01, s.pose.clone())).collect(),
        )
        .unwrap();
        assert_eq!(associate(&a, &shifted, 0.02).len(), 10);

        // Offset far beyond the window (and off the 0.1 s sample grid):
        // nothing matches.
        let far = Trajectory::from_samples(
            a.iter().map(|s| (s.t + 0.55, s.pose.clone())).collect(),
        )
        .unwrap();
        assert!(associate(&a, &far, 0.02).is_empty());
    }

    #[test]
    fn umeyama_recovers_constructed_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let points: Vec<Vector3<f64>> = (0..20)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let truth = random_pose(&mut rng);
        let moved: Vec<Vector3<f64>> = points
            .iter()
            .map(|p| truth.rotation() * p + truth.translation())
            .collect();
        let align = umeyama_align(&points, &moved, false).unwrap();
        assert!((align.rotation - truth.rotation()).norm() < 1e-9);
        assert!((align.translation - truth.translation()).norm() < 1e-9);
        assert_eq!(align.scale, 1.0);

        // With scale enabled, a scaled construction is recovered too.
        let scaled: Vec<Vector3<f64>> = points
            .iter()
            .map(|p| truth.rotation() * p * 2.5 + truth.translation())
            .collect();
        let align = umeyama_align(&points, &scaled, true).unwrap();
        assert!((align.scale - 2.5).abs() < 1e-9);
    }

    #[test]
    fn umeyama_identity_for_equal_sets() {
        let pts: Vec<Vector3<f64>> = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let a = umeyama_align(&pts, &pts, true).unwrap();
        assert!((a.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(a.translation.norm() < 1e-12);
        assert!((a.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn umeyama_rejects_degenerate_configurations() {
        // Fewer than three pairs.
        let two = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        assert!(umeyama_align(&two, &two, false).is_err());
        // Collinear points.
        let line: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            umeyama_align(&line, &line, false),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn umeyama_never_beats_itself() {
        // The solved transform's residual is no worse than leaving the
        // points where they are.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for seed in 0..5 {
            let est: Vec<Vector3<f64>> = (0..12)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                    )
                })
                .collect();
            let gt: Vec<Vector3<f64>> = est
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    )
                })
                .collect();
            let align = umeyama_align(&est, &gt, false).unwrap();
            let aligned: f64 = est
                .iter()
                .zip(&gt)
                .map(|(e, g)| (g - align.apply(e)).norm_squared())
                .sum();
            let raw: f64 = est
                .iter()
                .zip(&gt)
                .map(|(e, g)| (g - e).norm_squared())
                .sum();
            assert!(aligned <= raw + 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn ate_zero_on_self() {
        let traj = random_trajectory(20, 3);
        assert!(ate_rmse(&traj, &traj, true, 0.02).unwrap() < 1e-9);
        assert!(ate_rmse(&traj, &traj, false, 0.02).unwrap() < 1e-12);
    }

    #[test]
    fn ate_absorbs_rigid_offset_when_aligned() {
        let gt = random_trajectory(20, 4);
        let shift = Vector3::new(0.05, 0.0, 0.0);
        let est = Trajectory::from_samples(
            gt.iter()
                .map(|s| {
                    (
                        s.t,
                        s.pose.with_translation(s.pose.translation() + shift),
                    )
                })
                .collect(),
        )
        .unwrap();
        assert!(ate_rmse(&est, &gt, true, 0.02).unwrap() < 1e-9);
        let unaligned = ate_rmse(&est, &gt, false, 0.02).unwrap();
        assert!((unaligned - 5.0).abs() < 1e-9, "got {unaligned} cm");
    }

    #[test]
    fn ate_is_invariant_to_rigid_motion_of_the_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gt = random_trajectory(15, 6);
        let base = ate_rmse(&gt, &gt, true, 0.02).unwrap();
        let motion = random_pose(&mut rng);
        let moved = Trajectory::from_samples(
            gt.iter()
                .map(|s| (s.t, motion.compose(&s.pose)))
                .collect(),
        )
        .unwrap();
        let ate = ate_rmse(&moved, &gt, true, 0.02).unwrap();
        assert!((ate - base).abs() < 1e-9);
    }

    #[test]
    fn ate_needs_enough_pairs() {
        let a = random_trajectory(2, 9);
        assert!(matches!(
            ate_rmse(&a, &a, false, 0.02),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn flow_metrics_hand_cases() {
        let gt = FlowField::zeros(4, 4);
        assert_eq!(
            flow_metrics(&gt, &gt).unwrap(),
            FlowMetrics {
                acc_1px: 100.0,
                aepe: 0.0
            }
        );

        // Half the pixels off by exactly 2 px, half exact.
        let mut est = FlowField::zeros(4, 4);
        for i in 0..8 {
            est.set(i, 2.0, 0.0);
        }
        let m = flow_metrics(&est, &gt).unwrap();
        assert_eq!(m.acc_1px, 50.0);
        assert!((m.aepe - 1.0).abs() < 1e-12);

        // Uniform (3,4) error: 0% within 1 px, AEPE 5.
        let est = FlowField::uniform(4, 4, 3.0, 4.0);
        let m = flow_metrics(&est, &gt).unwrap();
        assert_eq!(m.acc_1px, 0.0);
        assert!((m.aepe - 5.0).abs() < 1e-12);
    }

    #[test]
    fn flow_metrics_rejects_shape_mismatch() {
        let a = FlowField::zeros(4, 4);
        let b = FlowField::zeros(4, 5);
        assert!(flow_metrics(&a, &b).is_err());
    }

    #[test]
    fn aepe_matches_per_pixel_mean_and_acc_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for case in 0..20 {
            let h = rng.random_range(1..=32);
            let w = rng.random_range(1..=32);
            let mut est = FlowField::zeros(h, w);
            let mut gt = FlowField::zeros(h, w);
            for i in 0..h * w {
                est.set(i, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                gt.set(i, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            }
            let m = flow_metrics(&est, &gt).unwrap();
            let mut sum = 0.0;
            for i in 0..h * w {
                let (ue, ve) = est.get(i);
                let (ug, vg) = gt.get(i);
                sum += ((ue - ug).powi(2) + (ve - vg).powi(2)).sqrt();
            }
            let mean = sum / (h * w) as f64;
            assert!((m.aepe - mean).abs() < 1e-12, "case {case}");
            assert!((0.0..=100.0).contains(&m.acc_1px), "case {case}");
        }
    }

    #[test]
    fn pose_metrics_thresholds() {
        let gt = vec![Pose::identity()];
        assert_eq!(
            pose_metrics(&gt, &gt, 0.1, 0.01).unwrap(),
            (100.0, 100.0)
        );

        // 0.2 degrees about z: rotation outside, translation inside.
        let angle = 0.2f64.to_radians();
        let est = vec![se3_exp(&Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, angle))];
        assert_eq!(pose_metrics(&est, &gt, 0.1, 0.01).unwrap(), (0.0, 100.0));

        // 5 mm translation: both inside.
        let est = vec![Pose::identity().with_translation(Vector3::new(0.005, 0.0, 0.0))];
        assert_eq!(pose_metrics(&est, &gt, 0.1, 0.01).unwrap(), (100.0, 100.0));

        assert!(pose_metrics(&est, &[], 0.1, 0.01).is_err());
    }

    #[test]
    fn accumulation_error_cases() {
        let closed = Trajectory::from_samples(vec![
            (0.0, Pose::identity()),
            (1.0, Pose::identity().with_translation(Vector3::new(3.0, 0.0, 0.0))),
            (2.0, Pose::identity()),
        ])
        .unwrap();
        assert_eq!(accumulation_error(&closed, 10.0).unwrap(), (0.0, 0.0));

        let open = Trajectory::from_samples(vec![
            (0.0, Pose::identity()),
            (1.0, Pose::identity().with_translation(Vector3::new(3.0, 4.0, 0.0))),
        ])
        .unwrap();
        let (err, pct) = accumulation_error(&open, 100.0).unwrap();
        assert!((err - 5.0).abs() < 1e-12);
        assert!((pct - 5.0).abs() < 1e-12);

        let single = Trajectory::from_samples(vec![(0.0, Pose::identity())]).unwrap();
        assert!(accumulation_error(&single, 1.0).is_err());
    }

    #[test]
    fn report_round_trips_to_csv_and_text() {
        let report = MetricReport {
            ate_rmse_cm: Some(1.25),
            acc_1px_pct: Some(80.0),
            aepe_px: Some(1.5),
            ..MetricReport::default()
        };
        report.validate().unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("ate_rmse_cm,"));
        assert!(csv.contains("1.250000,80.000000,1.500000,,,,"));
        let text = report.to_string();
        assert!(text.contains("ATE RMSE: 1.250 cm"));

        let bad = MetricReport {
            acc_1px_pct: Some(105.0),
            ..MetricReport::default()
        };
        assert!(bad.validate().is_err());
    }
}
