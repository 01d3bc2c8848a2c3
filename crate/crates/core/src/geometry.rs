//! SE(3) rigid transforms and the pose / optical-flow supervision losses.

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Angle below which exp/log switch to their series expansions.
const SMALL_ANGLE: f64 = 1e-6;

/// Rigid transform: orthonormal rotation with determinant +1, plus a
/// translation in meters. Twist coordinates are ordered
/// `[v_x, v_y, v_z, w_x, w_y, w_z]` (translation part first).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality and det +1 to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "rotation not orthonormal (|R'R - I| = {ortho:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "rotation determinant {det} != 1"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParam("non-finite translation".into()));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    /// For internally-constructed rotations that are orthonormal up to
    /// rounding (exp map, compositions).
    fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// Build from a quaternion (x, y, z, w). The norm must be within 1e-3 of
    /// one; it is renormalized exactly before use.
    pub fn from_quaternion(
        t: Vector3<f64>,
        qx: f64,
        qy: f64,
        qz: f64,
        qw: f64,
    ) -> Result<Self> {
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidParam(format!(
                "quaternion norm {norm} too far from 1"
            )));
        }
        let (x, y, z, w) = (qx / norm, qy / norm, qz / norm, qw / norm);
        let rotation = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        );
        Ok(Pose::from_parts(rotation, t))
    }

    /// Quaternion (x, y, z, w) with non-negative w.
    pub fn to_quaternion(&self) -> (f64, f64, f64, f64) {
        let r = &self.rotation;
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let (x, y, z, w) = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            (
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
                0.25 * s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            (
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(2, 1)] - r[(1, 2)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            (
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            (
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        };
        let n = (x * x + y * y + z * z + w * w).sqrt();
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        (sign * x / n, sign * y / n, sign * z / n, sign * w / n)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Replace the position, keeping the orientation.
    pub fn with_translation(&self, t: Vector3<f64>) -> Self {
        Pose::from_parts(self.rotation, t)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::from_parts(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Closed-form exponential map from twist coordinates.
///
/// Rodrigues for the rotation block, the SE(3) V-matrix for the translation;
/// below 1e-6 radians both switch to series expansions.
pub fn se3_exp(xi: &Vector6<f64>) -> Pose {
    let v = Vector3::new(xi[0], xi[1], xi[2]);
    let w = Vector3::new(xi[3], xi[4], xi[5]);
    let theta = w.norm();
    let omega = hat(&w);
    let omega2 = omega * omega;
    let (rot, vmat) = if theta < SMALL_ANGLE {
        let rot = Matrix3::identity() + omega + omega2 * 0.5;
        let vmat = Matrix3::identity() + omega * 0.5 + omega2 * (1.0 / 6.0);
        (rot, vmat)
    } else {
        let t2 = theta * theta;
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / t2;
        let c = (theta - theta.sin()) / (t2 * theta);
        (
            Matrix3::identity() + omega * a + omega2 * b,
            Matrix3::identity() + omega * b + omega2 * c,
        )
    };
    Pose::from_parts(rot, vmat * v)
}

/// Logarithm map to twist coordinates, principal branch |theta| <= pi.
///
/// The angle comes from atan2 of the skew magnitude against the trace, which
/// stays well-conditioned at both ends of the branch. Near pi, where the
/// skew part vanishes, the axis is extracted from the symmetric part of R
/// via a a' = (sym(R) - cos(theta) I) / (1 - cos(theta)).
pub fn se3_log(pose: &Pose) -> Vector6<f64> {
    let r = &pose.rotation;
    // s = sin(theta) * axis.
    let s = vee(&((r - r.transpose()) * 0.5));
    let sin_theta = s.norm();
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    let w: Vector3<f64> = if theta < SMALL_ANGLE {
        // omega = s * theta / sin(theta) ~ s (1 + theta^2 / 6).
        s * (1.0 + theta * theta / 6.0)
    } else if cos_theta < 0.0 && sin_theta < 1e-4 {
        let outer = ((r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta)
            / (1.0 - cos_theta);
        let diag = [outer[(0, 0)], outer[(1, 1)], outer[(2, 2)]];
        let k = if diag[0] >= diag[1] && diag[0] >= diag[2] {
            0
        } else if diag[1] >= diag[2] {
            1
        } else {
            2
        };
        let axis = Vector3::new(outer[(0, k)], outer[(1, k)], outer[(2, k)]).normalize();
        let axis = if s.dot(&axis) < 0.0 { -axis } else { axis };
        // asin of the skew magnitude recovers pi - theta accurately.
        let theta_pi = std::f64::consts::PI - sin_theta.clamp(0.0, 1.0).asin();
        axis * theta_pi
    } else {
        s * (theta / sin_theta)
    };

    let theta = w.norm();
    let omega = hat(&w);
    let omega2 = omega * omega;
    let v_inv = if theta < SMALL_ANGLE {
        Matrix3::identity() - omega * 0.5 + omega2 * (1.0 / 12.0)
    } else {
        let t2 = theta * theta;
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / t2;
        Matrix3::identity() - omega * 0.5 + omega2 * ((1.0 - a / (2.0 * b)) / t2)
    };
    let v = v_inv * pose.translation;
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

/// Per-pixel 2D displacement field, shape H x W x 2 (u then v).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParam("flow field extents must be positive".into()));
        }
        if data.len() != height * width * 2 {
            return Err(Error::ShapeMismatch(format!(
                "flow field {height}x{width} needs {} values, got {}",
                height * width * 2,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(FlowField {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    /// Constant displacement everywhere.
    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for _ in 0..height * width {
            data.push(u);
            data.push(v);
        }
        FlowField {
            height,
            width,
            data,
        }
    }

    /// Reinterpret an H x W x 2 tensor as a flow field.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 3 || shape[2] != 2 {
            return Err(Error::ShapeMismatch(format!(
                "flow field wants shape [h, w, 2], got {shape:?}"
            )));
        }
        FlowField::new(
            shape[0],
            shape[1],
            t.as_slice().iter().map(|&v| v.into_f64()).collect(),
        )
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(vec![self.height, self.width, 2], self.data.clone())
            .expect("flow field is always a valid tensor")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, i: usize) -> (f64, f64) {
        (self.data[2 * i], self.data[2 * i + 1])
    }

    #[inline]
    pub fn set(&mut self, i: usize, u: f64, v: f64) {
        self.data[2 * i] = u;
        self.data[2 * i + 1] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Iterate weighting for the supervision losses.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Exponential base applied as gamma^(M - k); later iterates weigh more.
    pub gamma: f64,
    /// Relative weight of the rotation block in the twist norm.
    pub rotation_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.9,
            rotation_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.rotation_weight < 0.0 {
            return Err(Error::InvalidParam("rotation weight must be >= 0".into()));
        }
        Ok(())
    }
}

fn weighted_twist_norm(xi: &Vector6<f64>, rotation_weight: f64) -> f64 {
    let t2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    let r2 = xi[3] * xi[3] + xi[4] * xi[4] + xi[5] * xi[5];
    (t2 + rotation_weight * rotation_weight * r2).sqrt()
}

/// Pose supervision loss over refinement iterates:
/// sum_k gamma^(M-k) sum_i |log(T_i^-1 G_i)|.
pub fn pose_loss(iterates: &[Vec<Pose>], gt: &[Pose], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let m = iterates.len();
    if m == 0 {
        return Err(Error::InvalidParam("pose loss needs at least one iterate".into()));
    }
    for (k, set) in iterates.iter().enumerate() {
        if set.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!(
                "iterate {} holds {} poses, ground truth {}",
                k + 1,
                set.len(),
                gt.len()
            )));
        }
    }
    let mut total = 0.0;
    for (k, set) in iterates.iter().enumerate() {
        let weight = cfg.gamma.powi((m - (k + 1)) as i32);
        let mut inner = 0.0;
        for (est, truth) in set.iter().zip(gt) {
            let err = se3_log(&est.inverse().compose(truth));
            inner += weighted_twist_norm(&err, cfg.rotation_weight);
        }
        total += weight * inner;
    }
    Ok(total)
}

/// Optical-flow supervision loss over refinement iterates:
/// sum_k gamma^(M-k) mean_px |(u', v') - (u, v)|.
pub fn flow_loss(iterates: &[FlowField], gt: &FlowField, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let m = iterates.len();
    if m == 0 {
        return Err(Error::InvalidParam("flow loss needs at least one iterate".into()));
    }
    for (k, est) in iterates.iter().enumerate() {
        if !est.same_shape(gt) {
            return Err(Error::ShapeMismatch(format!(
                "iterate {} is {}x{}, ground truth {}x{}",
                k + 1,
                est.height(),
                est.width(),
                gt.height(),
                gt.width()
            )));
        }
    }
    let n = gt.pixels() as f64;
    let mut total = 0.0;
    for (k, est) in iterates.iter().enumerate() {
        let weight = cfg.gamma.powi((m - (k + 1)) as i32);
        let mut sum = 0.0;
        for i in 0..gt.pixels() {
            let (ue, ve) = est.get(i);
            let (ug, vg) = gt.get(i);
            sum += ((ue - ug).powi(2) + (ve - vg).powi(2)).sqrt();
        }
        total += weight * (sum / n);
    }
    Ok(total)
}

/// Total supervision loss: sum of the distillation, pose, and flow terms.
pub fn total_loss(l_distill: f64, l_pose: f64, l_flow: f64) -> Result<f64> {
    for (name, v) in [
        ("distillation", l_distill),
        ("pose", l_pose),
        ("flow", l_flow),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidParam(format!(
                "{name} loss must be finite and non-negative, got {v}"
            )));
        }
    }
    Ok(l_distill + l_pose + l_flow)
}
