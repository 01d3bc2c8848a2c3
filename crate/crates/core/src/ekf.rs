//! Extended Kalman filter fusing visual-SLAM and GNSS position streams.
//!
//! The state is the 3D position only. The motion model is additive,
//! f(x, u) = x + u with an identity Jacobian, and the measurement stacks the
//! visual and GNSS position observations of the same state: h(x) = (x, x)
//! with Jacobian H = [I; I].
//!
//! Naming note: following the fusion formulation this implements, `Q` is the
//! measurement noise covariance used in the update and `R` is the process
//! noise covariance added in the prediction — swapped relative to the most
//! common textbook convention.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Maximum innovation-covariance condition number before the update is
/// declared singular.
const MAX_CONDITION: f64 = 1e12;

/// Position estimate with covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x: Vector3<f64>,
    pub p: Matrix3<f64>,
}

impl EkfState {
    pub fn new(x: Vector3<f64>, p: Matrix3<f64>) -> Result<Self> {
        check_symmetric("state covariance", &p)?;
        Ok(EkfState { x, p })
    }
}

fn check_symmetric(name: &str, m: &Matrix3<f64>) -> Result<()> {
    if (m - m.transpose()).norm() > 1e-9 {
        return Err(Error::InvalidParam(format!("{name} is not symmetric")));
    }
    Ok(())
}

fn symmetrize3(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Measurement model: stacked (visual, GNSS) observation of the position.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    /// Measurement noise covariance (6x6, positive definite).
    pub q: Matrix6<f64>,
    /// Process noise covariance (3x3, positive semidefinite).
    pub r: Matrix3<f64>,
}

impl MeasurementModel {
    pub fn new(q: Matrix6<f64>, r: Matrix3<f64>) -> Result<Self> {
        if (q - q.transpose()).norm() > 1e-9 {
            return Err(Error::InvalidParam("measurement noise Q is not symmetric".into()));
        }
        let eig = q.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidParam(
                "measurement noise Q must be positive definite".into(),
            ));
        }
        check_symmetric("process noise R", &r)?;
        let eig = r.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
            return Err(Error::InvalidParam(
                "process noise R must be positive semidefinite".into(),
            ));
        }
        Ok(MeasurementModel { q, r })
    }

    /// Diagonal noises: per-axis visual and GNSS measurement variances and
    /// process variance.
    pub fn diagonal(visual_var: f64, gnss_var: f64, process_var: f64) -> Result<Self> {
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = visual_var;
            q[(i + 3, i + 3)] = gnss_var;
        }
        MeasurementModel::new(q, Matrix3::identity() * process_var)
    }

    /// h(x): both observation blocks predict the state itself.
    pub fn predict_measurement(&self, x: &Vector3<f64>) -> Vector6<f64> {
        Vector6::new(x.x, x.y, x.z, x.x, x.y, x.z)
    }
}

/// Displacement increment applied by the motion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput(pub Vector3<f64>);

impl ControlInput {
    pub fn zero() -> Self {
        ControlInput(Vector3::zeros())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParam("non-finite control input".into()));
        }
        Ok(())
    }
}

/// Prediction step: x <- x + u, P <- P + R (the state Jacobian is identity).
pub fn ekf_predict(s: &EkfState, u: &ControlInput, r: &Matrix3<f64>) -> Result<EkfState> {
    u.validate()?;
    check_symmetric("process noise R", r)?;
    Ok(EkfState {
        x: s.x + u.0,
        p: symmetrize3(&(s.p + r)),
    })
}

fn check_condition(eigenvalues: impl Iterator<Item = f64>) -> Result<()> {
    let mut min = f64::INFINITY;
    let mut max = 0.0f64;
    for l in eigenvalues {
        min = min.min(l);
        max = max.max(l.abs());
    }
    if min <= 0.0 || max / min > MAX_CONDITION {
        return Err(Error::SingularInnovation(if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }));
    }
    Ok(())
}

/// Update step with the stacked 6D measurement:
/// K = P H' (H P H' + Q)^-1, x <- x + K (z - h(x)), P <- P - K H P,
/// re-symmetrized afterwards.
pub fn ekf_update(s: &EkfState, z: &Vector6<f64>, m: &MeasurementModel) -> Result<EkfState> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParam("non-finite measurement".into()));
    }
    // H = [I; I], so H P H' tiles P into all four blocks.
    let mut innovation_cov = m.q;
    for bi in 0..2 {
        for bj in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    innovation_cov[(3 * bi + i, 3 * bj + j)] += s.p[(i, j)];
                }
            }
        }
    }
    check_condition(innovation_cov.symmetric_eigen().eigenvalues.iter().copied())?;
    let inv = innovation_cov
        .try_inverse()
        .ok_or(Error::SingularInnovation(f64::INFINITY))?;

    // P H' = [P  P] (3x6).
    let mut ph_t = nalgebra::SMatrix::<f64, 3, 6>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            ph_t[(i, j)] = s.p[(i, j)];
            ph_t[(i, j + 3)] = s.p[(i, j)];
        }
    }
    let gain = ph_t * inv; // 3x6
    let innovation = z - m.predict_measurement(&s.x);
    let x = s.x + gain * innovation;

    // K H P with H P = [P; P] (6x3).
    let mut hp = nalgebra::SMatrix::<f64, 6, 3>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            hp[(i, j)] = s.p[(i, j)];
            hp[(i + 3, j)] = s.p[(i, j)];
        }
    }
    let p = symmetrize3(&(s.p - gain * hp));
    Ok(EkfState { x, p })
}

/// Update step with only the visual block of the measurement, used when no
/// GNSS sample falls inside the association window.
pub fn ekf_update_visual_only(
    s: &EkfState,
    z: &Vector3<f64>,
    m: &MeasurementModel,
) -> Result<EkfState> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParam("non-finite measurement".into()));
    }
    let q_top = m.q.fixed_view::<3, 3>(0, 0).into_owned();
    let innovation_cov = s.p + q_top;
    check_condition(innovation_cov.symmetric_eigen().eigenvalues.iter().copied())?;
    let inv = innovation_cov
        .try_inverse()
        .ok_or(Error::SingularInnovation(f64::INFINITY))?;
    let gain = s.p * inv;
    let x = s.x + gain * (z - s.x);
    let p = symmetrize3(&(s.p - gain * s.p));
    Ok(EkfState { x, p })
}

/// One GNSS position fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssSample {
    pub t: f64,
    pub pos: Vector3<f64>,
}

/// Parse GNSS samples from CSV text, one `timestamp,x,y,z` row per line
/// (seconds, meters, ENU local frame). `#` comments and a literal header
/// row are skipped. Timestamps must ascend.
pub fn parse_gnss_csv(text: &str, path: &str) -> Result<Vec<GnssSample>> {
    let mut out: Vec<GnssSample> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 0 && line.to_ascii_lowercase().replace(' ', "") == "timestamp,x,y,z" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("expected 4 comma-separated fields, found {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 4];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("not a number: `{f}`"),
            })?;
            if !vals[i].is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    msg: "non-finite value".into(),
                });
            }
        }
        if let Some(prev) = out.last() {
            if vals[0] <= prev.t {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    msg: format!("timestamp {} not ascending", vals[0]),
                });
            }
        }
        out.push(GnssSample {
            t: vals[0],
            pos: Vector3::new(vals[1], vals[2], vals[3]),
        });
    }
    Ok(out)
}

pub fn load_gnss_csv<P: AsRef<std::path::Path>>(path: P) -> Result<Vec<GnssSample>> {
    let text = std::fs::read_to_string(&path)?;
    parse_gnss_csv(&text, &path.as_ref().display().to_string())
}

/// Stream fusion configuration.
#[derive(Debug, Clone, Copy)]
pub struct FuseConfig {
    /// Per-axis visual measurement variance (m^2).
    pub visual_var: f64,
    /// Per-axis GNSS measurement variance (m^2).
    pub gnss_var: f64,
    /// Per-axis process variance added at each prediction (m^2).
    pub process_var: f64,
    /// Per-axis initial state variance (m^2).
    pub initial_var: f64,
    /// GNSS association window (seconds).
    pub max_dt: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig {
            visual_var: 0.01,
            gnss_var: 0.0004,
            process_var: 1e-4,
            initial_var: 0.01,
            max_dt: 0.05,
        }
    }
}

impl FuseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.visual_var <= 0.0 || self.gnss_var <= 0.0 {
            return Err(Error::InvalidParam(
                "measurement variances must be positive".into(),
            ));
        }
        if self.process_var < 0.0 || self.initial_var < 0.0 {
            return Err(Error::InvalidParam(
                "process and initial variances must be >= 0".into(),
            ));
        }
        if self.max_dt <= 0.0 {
            return Err(Error::InvalidParam("max_dt must be positive".into()));
        }
        Ok(())
    }
}

fn nearest_gnss(gnss: &[GnssSample], t: f64) -> Option<&GnssSample> {
    if gnss.is_empty() {
        return None;
    }
    let idx = gnss.partition_point(|s| s.t < t);
    let mut best: Option<&GnssSample> = None;
    for cand in [idx.checked_sub(1).and_then(|i| gnss.get(i)), gnss.get(idx)]
        .into_iter()
        .flatten()
    {
        best = match best {
            Some(b) if (b.t - t).abs() <= (cand.t - t).abs() => Some(b),
            _ => Some(cand),
        };
    }
    best
}

/// Fuse a visual trajectory with GNSS position fixes.
///
/// The filter starts anchored at the GNSS fix associated with the first
/// visual sample (the globally-referenced sensor), falling back to the
/// visual position when none is within `max_dt`. Each visual sample then
/// advances the filter with the displacement from the previous visual
/// position and updates with the stacked (visual, GNSS) measurement; the
/// GNSS half is the nearest fix within `max_dt`, and the update degrades to
/// visual-only when none exists. The fused position is written into the
/// visual sample's pose, keeping its orientation. Output timestamps and
/// length match the visual stream.
pub fn fuse_streams(
    visual: &Trajectory,
    gnss: &[GnssSample],
    cfg: &FuseConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if visual.is_empty() {
        return Err(Error::InvalidParam("visual stream is empty".into()));
    }
    let model = MeasurementModel::diagonal(cfg.visual_var, cfg.gnss_var, cfg.process_var)?;
    let first = visual.get(0);
    let anchor = match nearest_gnss(gnss, first.t) {
        Some(g) if (g.t - first.t).abs() <= cfg.max_dt => g.pos,
        _ => *first.pose.translation(),
    };
    let mut state = EkfState::new(anchor, Matrix3::identity() * cfg.initial_var)?;
    let mut prev_visual = *first.pose.translation();
    let mut fused = Vec::with_capacity(visual.len());
    for sample in visual.iter() {
        let v_pos = *sample.pose.translation();
        let u = ControlInput(v_pos - prev_visual);
        state = ekf_predict(&state, &u, &model.r)?;
        state = match nearest_gnss(gnss, sample.t) {
            Some(g) if (g.t - sample.t).abs() <= cfg.max_dt => {
                let z = Vector6::new(v_pos.x, v_pos.y, v_pos.z, g.pos.x, g.pos.y, g.pos.z);
                ekf_update(&state, &z, &model)?
            }
            _ => ekf_update_visual_only(&state, &v_pos, &model)?,
        };
        fused.push((sample.t, sample.pose.with_translation(state.x)));
        prev_visual = v_pos;
    }
    Trajectory::from_samples(fused)
}
