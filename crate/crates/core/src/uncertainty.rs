//! Probabilistic laser point model.
//!
//! Range and bearing noise give a LiDAR-frame covariance; encoder
//! interpolation noise and the extrinsic chain carry it into the motor and
//! world frames by first-order propagation.

use std::fmt;

use nalgebra::{Matrix3, Matrix3x2, Matrix3x6, Matrix3x4, Matrix6, Matrix4, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::angles::{angle_diff, normalize_angle};
use crate::dh::{rot_z, CalibrationVector, MountModel, RigidTransform};
use crate::error::{Error, Result};

/// Standard deviations of the three noise sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Range noise, metres.
    pub sigma_depth: f64,
    /// Isotropic bearing noise in the tangent plane, radians.
    pub sigma_bearing: f64,
    /// Interpolated encoder angle noise, radians.
    pub sigma_encoder: f64,
}

impl NoiseModel {
    pub const fn zero() -> Self {
        Self { sigma_depth: 0.0, sigma_bearing: 0.0, sigma_encoder: 0.0 }
    }

    pub fn new(sigma_depth: f64, sigma_bearing: f64, sigma_encoder: f64) -> Result<Self> {
        let m = Self { sigma_depth, sigma_bearing, sigma_encoder };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_depth", self.sigma_depth),
            ("sigma_bearing", self.sigma_bearing),
            ("sigma_encoder", self.sigma_encoder),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_depth == 0.0 && self.sigma_bearing == 0.0 && self.sigma_encoder == 0.0
    }

    /// Encoder sigma for a motor angle that is uniformly uncertain within one
    /// encoder sampling interval.
    pub fn uniform_interval_encoder_sigma(motor_speed: f64, encoder_rate: f64) -> f64 {
        motor_speed.abs() / encoder_rate / 12f64.sqrt()
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// LiDAR
    L,
    /// Motor
    M,
    /// World
    W,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Frame::L => "L",
            Frame::M => "M",
            Frame::W => "W",
        };
        f.write_str(s)
    }
}

/// 3x3 covariance of a point, tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointCovariance {
    pub frame: Frame,
    pub matrix: Matrix3<f64>,
}

impl PointCovariance {
    pub fn new(frame: Frame, matrix: Matrix3<f64>) -> Self {
        Self { frame, matrix: symmetrize(&matrix) }
    }

    pub fn zero(frame: Frame) -> Self {
        Self { frame, matrix: Matrix3::zeros() }
    }

    pub fn asymmetry(&self) -> f64 {
        (self.matrix - self.matrix.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix).eigenvalues.min()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

/// Body pose in the world with rotation and translation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseWithCovariance {
    pub transform: RigidTransform,
    /// Covariance of the right-multiplied rotation perturbation, rad^2.
    pub rot_cov: Matrix3<f64>,
    /// Covariance of the additive translation perturbation, m^2.
    pub trans_cov: Matrix3<f64>,
}

impl PoseWithCovariance {
    pub fn certain(transform: RigidTransform) -> Self {
        Self { transform, rot_cov: Matrix3::zeros(), trans_cov: Matrix3::zeros() }
    }
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Orthonormal basis `[N1 N2]` of the plane orthogonal to `omega`.
///
/// Built from the Householder reflection that sends the coordinate axis
/// closest to `omega` onto it, so the result is deterministic. It is not
/// continuous in `omega`: the basis jumps where the dominant axis changes.
pub fn tangent_basis(omega: &Vector3<f64>) -> Result<Matrix3x2<f64>> {
    let norm = omega.norm();
    if !(norm > 1e-12 && norm.is_finite()) {
        return Err(Error::InvalidArgument("tangent_basis needs a nonzero direction".into()));
    }
    let w = omega / norm;
    let k = w.iamax();
    let s = if w[k] >= 0.0 { -1.0 } else { 1.0 };
    let mut v = -w;
    v[k] += s;
    let h = Matrix3::identity() - v * v.transpose() * (2.0 / v.norm_squared());
    let cols: Vec<usize> = (0..3).filter(|&i| i != k).collect();
    Ok(Matrix3x2::from_columns(&[h.column(cols[0]).into_owned(), h.column(cols[1]).into_owned()]))
}

/// LiDAR-frame covariance from range and bearing noise:
/// `A diag(s_d^2, s_w^2, s_w^2) A^T` with `A = [w, -d [w]x N(w)]`.
pub fn lidar_point_covariance(depth: f64, omega: &Vector3<f64>, noise: &NoiseModel) -> Result<PointCovariance> {
    if !(depth > 0.0) {
        return Err(Error::InvalidArgument(format!("depth must be positive, got {depth}")));
    }
    let w = omega.normalize();
    let n = tangent_basis(&w)?;
    let tangent = -depth * skew(&w) * n;
    let radial = w * w.transpose() * noise.sigma_depth.powi(2);
    let lateral = tangent * tangent.transpose() * noise.sigma_bearing.powi(2);
    Ok(PointCovariance::new(Frame::L, radial + lateral))
}

/// Encoder angle at `t_j` by linear interpolation along the shortest arc from
/// `theta_a` to `theta_b`.
pub fn interpolate_encoder(theta_a: f64, theta_b: f64, t_a: f64, t_b: f64, t_j: f64) -> Result<f64> {
    if !(t_b > t_a) {
        return Err(Error::InvalidArgument(format!("encoder interval [{t_a}, {t_b}] is empty")));
    }
    if !(t_j >= t_a && t_j <= t_b) {
        return Err(Error::UncoveredTimestamp { t: t_j });
    }
    if t_j == t_a {
        return Ok(normalize_angle(theta_a));
    }
    let lambda = (t_j - t_a) / (t_b - t_a);
    Ok(normalize_angle(theta_a + lambda * angle_diff(theta_b, theta_a)))
}

/// Maps a LiDAR point and its covariance into the motor frame, adding the
/// encoder angle uncertainty.
pub fn propagate_to_motor(
    p_l: &Vector3<f64>,
    cov_l: &PointCovariance,
    x: &CalibrationVector,
    d1: f64,
    theta_j: f64,
    sigma_encoder: f64,
) -> Result<(Vector3<f64>, PointCovariance)> {
    if cov_l.frame != Frame::L {
        return Err(Error::InvalidArgument(format!("expected an L-frame covariance, got {}", cov_l.frame)));
    }
    let model = MountModel::new(x, d1);
    let fixed = model.fixed_part();
    let rz = rot_z(theta_j);
    let pre = model.pre_spin(p_l);
    let j_theta = (-(rz * skew(&pre))).column(2).into_owned();
    let j_p = rz * fixed.rotation;

    let mut jac = Matrix3x4::zeros();
    jac.set_column(0, &j_theta);
    jac.fixed_view_mut::<3, 3>(0, 1).copy_from(&j_p);
    let mut input = Matrix4::zeros();
    input[(0, 0)] = sigma_encoder * sigma_encoder;
    input.fixed_view_mut::<3, 3>(1, 1).copy_from(&cov_l.matrix);

    let cov = jac * input * jac.transpose();
    Ok((rz * pre, PointCovariance::new(Frame::M, cov)))
}

/// Maps a motor-frame point into the world through the motor-to-body
/// extrinsic and an uncertain body pose.
pub fn propagate_to_world(
    p_m: &Vector3<f64>,
    cov_m: &PointCovariance,
    body_extrinsic: &RigidTransform,
    pose: &PoseWithCovariance,
) -> Result<(Vector3<f64>, PointCovariance)> {
    if cov_m.frame != Frame::M {
        return Err(Error::InvalidArgument(format!("expected an M-frame covariance, got {}", cov_m.frame)));
    }
    let r_wb = pose.transform.rotation;
    let p_b = body_extrinsic.apply(p_m);
    let j_rot = -(r_wb * skew(&p_b));
    let j_point = r_wb * body_extrinsic.rotation;

    let mut b = Matrix3x6::zeros();
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_rot);
    b.fixed_view_mut::<3, 3>(0, 3).copy_from(&j_point);
    let mut input = Matrix6::zeros();
    input.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rot_cov);
    input.fixed_view_mut::<3, 3>(3, 3).copy_from(&cov_m.matrix);
    // J_t = I
    let cov = b * input * b.transpose() + pose.trans_cov;
    Ok((pose.transform.apply(&p_b), PointCovariance::new(Frame::W, cov)))
}
