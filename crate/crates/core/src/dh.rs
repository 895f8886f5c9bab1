//! Two-joint Denavit-Hartenberg model of the LiDAR-to-motor transform.
//!
//! A laser point `p_L` in the LiDAR frame maps into the motor frame as
//!
//! ```text
//! p_M = Rz(theta1) * ( Rx(phi1) * Rz(theta2) * ( Rx(phi2) * p_L + t1 ) + t2 )
//! t1 = (a2, 0, d2),  t2 = (a1, 0, d1)
//! ```
//!
//! `theta1` is the encoder angle and `d1` comes from the mechanical drawing.
//! Of the remaining six slots, two are fixed by the [`MountKind`] and four form
//! the [`CalibrationVector`].

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::angles::normalize_angle;
use crate::error::Error;

/// Elementary rotation about the x-axis.
pub fn rot_x(phi: f64) -> Matrix3<f64> {
    let (s, c) = phi.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Elementary rotation about the z-axis.
pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// How the LiDAR's internal scanning mirror is oriented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MountKind {
    /// Omni LiDAR (mirror spins about its z-axis). Fixed: `a2 = 0`, `phi2 = 0`.
    /// Free: `theta2, d2, a1, phi1`.
    SpinningOmni,
    /// Non-omni LiDAR (mirror spins about its x-axis). Fixed: `a1 = 0`,
    /// `phi1 = pi/2`. Free: `theta2, d2, a2, phi2`.
    SpinningNonOmni,
}

impl MountKind {
    pub const ALL: [MountKind; 2] = [MountKind::SpinningOmni, MountKind::SpinningNonOmni];

    pub fn as_str(self) -> &'static str {
        match self {
            MountKind::SpinningOmni => "omni",
            MountKind::SpinningNonOmni => "non-omni",
        }
    }

    /// DH slot names of the four free parameters, in calibration-vector order.
    pub fn parameter_names(self) -> [&'static str; 4] {
        match self {
            MountKind::SpinningOmni => ["theta2", "d2", "a1", "phi1"],
            MountKind::SpinningNonOmni => ["theta2", "d2", "a2", "phi2"],
        }
    }
}

impl fmt::Display for MountKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MountKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "omni" | "spinning-omni" | "mid360" => Ok(MountKind::SpinningOmni),
            "non-omni" | "nonomni" | "spinning-non-omni" | "avia" => {
                Ok(MountKind::SpinningNonOmni)
            }
            other => Err(Error::InvalidArgument(format!("unknown mount kind `{other}`"))),
        }
    }
}

/// The eight DH parameters. Angles are kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhParameterSet {
    pub theta1: f64,
    pub d1: f64,
    pub a1: f64,
    pub phi1: f64,
    pub theta2: f64,
    pub d2: f64,
    pub a2: f64,
    pub phi2: f64,
}

impl DhParameterSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        theta1: f64,
        d1: f64,
        a1: f64,
        phi1: f64,
        theta2: f64,
        d2: f64,
        a2: f64,
        phi2: f64,
    ) -> Self {
        Self {
            theta1: normalize_angle(theta1),
            d1,
            a1,
            phi1: normalize_angle(phi1),
            theta2: normalize_angle(theta2),
            d2,
            a2,
            phi2: normalize_angle(phi2),
        }
    }

    pub fn zeros() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.theta1, self.d1, self.a1, self.phi1, self.theta2, self.d2, self.a2, self.phi2,
        ]
    }

    /// Maps a LiDAR-frame point into the motor frame.
    pub fn transform_to_motor(&self, p_l: &Vector3<f64>) -> Vector3<f64> {
        let t1 = Vector3::new(self.a2, 0.0, self.d2);
        let t2 = Vector3::new(self.a1, 0.0, self.d1);
        let inner = rot_x(self.phi2) * p_l + t1;
        rot_z(self.theta1) * (rot_x(self.phi1) * (rot_z(self.theta2) * inner) + t2)
    }

    pub fn rigid_transform(&self) -> RigidTransform {
        let rz1 = rot_z(self.theta1);
        let m = rot_x(self.phi1) * rot_z(self.theta2);
        let t1 = Vector3::new(self.a2, 0.0, self.d2);
        let t2 = Vector3::new(self.a1, 0.0, self.d1);
        RigidTransform {
            rotation: rz1 * m * rot_x(self.phi2),
            translation: rz1 * (m * t1 + t2),
        }
    }
}

/// Free form of [`DhParameterSet::transform_to_motor`].
pub fn transform_to_motor(dh: &DhParameterSet, p_l: &Vector3<f64>) -> Vector3<f64> {
    dh.transform_to_motor(p_l)
}

/// The four calibrated parameters `[theta_bar, d_bar, a_bar, phi_bar]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationVector {
    pub theta_bar: f64,
    pub d_bar: f64,
    pub a_bar: f64,
    pub phi_bar: f64,
    pub kind: MountKind,
}

impl CalibrationVector {
    pub fn new(kind: MountKind, theta_bar: f64, d_bar: f64, a_bar: f64, phi_bar: f64) -> Self {
        Self {
            theta_bar: normalize_angle(theta_bar),
            d_bar,
            a_bar,
            phi_bar: normalize_angle(phi_bar),
            kind,
        }
    }

    pub fn from_array(kind: MountKind, v: [f64; 4]) -> Self {
        Self::new(kind, v[0], v[1], v[2], v[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.theta_bar, self.d_bar, self.a_bar, self.phi_bar]
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::from(self.as_array())
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Additive update of all four parameters, angles re-wrapped.
    pub fn step(&self, delta: &Vector4<f64>) -> Self {
        Self::new(
            self.kind,
            self.theta_bar + delta[0],
            self.d_bar + delta[1],
            self.a_bar + delta[2],
            self.phi_bar + delta[3],
        )
    }

    pub fn to_dh(&self, theta1: f64, d1: f64) -> DhParameterSet {
        match self.kind {
            MountKind::SpinningOmni => DhParameterSet::new(
                theta1,
                d1,
                self.a_bar,
                self.phi_bar,
                self.theta_bar,
                self.d_bar,
                0.0,
                0.0,
            ),
            MountKind::SpinningNonOmni => DhParameterSet::new(
                theta1,
                d1,
                0.0,
                FRAC_PI_2,
                self.theta_bar,
                self.d_bar,
                self.a_bar,
                self.phi_bar,
            ),
        }
    }

    /// Reads the free slots back out of a DH set (inverse of [`Self::to_dh`]).
    pub fn from_dh(dh: &DhParameterSet, kind: MountKind) -> Self {
        match kind {
            MountKind::SpinningOmni => Self::new(kind, dh.theta2, dh.d2, dh.a1, dh.phi1),
            MountKind::SpinningNonOmni => Self::new(kind, dh.theta2, dh.d2, dh.a2, dh.phi2),
        }
    }

    /// Per-component error `self - other`, angles wrapped to (-pi, pi].
    pub fn error_to(&self, other: &CalibrationVector) -> [f64; 4] {
        [
            normalize_angle(self.theta_bar - other.theta_bar),
            self.d_bar - other.d_bar,
            self.a_bar - other.a_bar,
            normalize_angle(self.phi_bar - other.phi_bar),
        ]
    }

    /// Largest translational error in millimetres.
    pub fn translation_error_mm(&self, truth: &CalibrationVector) -> f64 {
        let e = self.error_to(truth);
        e[1].abs().max(e[2].abs()) * 1e3
    }

    /// Largest angular error in degrees.
    pub fn angle_error_deg(&self, truth: &CalibrationVector) -> f64 {
        let e = self.error_to(truth);
        e[0].abs().max(e[3].abs()).to_degrees()
    }
}

/// Rotation plus translation, `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// Rotation from an axis-angle vector (exponential map) plus a translation.
    pub fn from_rotation_vector(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::new(rotvec).into_inner();
        Self::new(rotation, translation)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt * self.translation))
    }

    /// Largest deviation of `R^T R` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

/// A calibration vector with its fixed matrices precomputed, for mapping many
/// points that differ only in encoder angle.
#[derive(Debug, Clone, Copy)]
pub struct MountModel {
    kind: MountKind,
    rx_phi1: Matrix3<f64>,
    rz_theta2: Matrix3<f64>,
    rx_phi2: Matrix3<f64>,
    // Rx(phi1) * Rz(theta2)
    m1: Matrix3<f64>,
    // Rx(phi1) * Rz(theta2) * Rx(phi2)
    r_bar: Matrix3<f64>,
    t1: Vector3<f64>,
    t2: Vector3<f64>,
    t_bar: Vector3<f64>,
}

impl MountModel {
    pub fn new(x: &CalibrationVector, d1: f64) -> Self {
        let dh = x.to_dh(0.0, d1);
        let rx_phi1 = rot_x(dh.phi1);
        let rz_theta2 = rot_z(dh.theta2);
        let rx_phi2 = rot_x(dh.phi2);
        let m1 = rx_phi1 * rz_theta2;
        let t1 = Vector3::new(dh.a2, 0.0, dh.d2);
        let t2 = Vector3::new(dh.a1, 0.0, dh.d1);
        Self {
            kind: x.kind,
            rx_phi1,
            rz_theta2,
            rx_phi2,
            m1,
            r_bar: m1 * rx_phi2,
            t1,
            t2,
            t_bar: m1 * t1 + t2,
        }
    }

    /// The encoder-independent part `(R_bar, t_bar)` of the transform.
    pub fn fixed_part(&self) -> RigidTransform {
        RigidTransform::new(self.r_bar, self.t_bar)
    }

    /// Point in the motor frame before the encoder rotation is applied.
    pub fn pre_spin(&self, p_l: &Vector3<f64>) -> Vector3<f64> {
        self.r_bar * p_l + self.t_bar
    }

    pub fn to_motor(&self, theta1: f64, p_l: &Vector3<f64>) -> Vector3<f64> {
        rot_z(theta1) * self.pre_spin(p_l)
    }

    /// 3x4 derivative of the motor-frame point with respect to
    /// `[theta_bar, d_bar, a_bar, phi_bar]`.
    pub fn jacobian(&self, theta1: f64, p_l: &Vector3<f64>) -> Matrix3x4<f64> {
        let rz1 = rot_z(theta1);
        let w = self.rx_phi2 * p_l + self.t1;
        let col_theta = self.m1 * Vector3::z().cross(&w);
        let col_d = self.m1.column(2).into_owned();
        let (col_a, col_phi) = match self.kind {
            MountKind::SpinningOmni => {
                let v = self.rz_theta2 * w;
                (Vector3::x(), self.rx_phi1 * Vector3::x().cross(&v))
            }
            MountKind::SpinningNonOmni => {
                let col_a = self.m1.column(0).into_owned();
                (col_a, self.r_bar * Vector3::x().cross(p_l))
            }
        };
        Matrix3x4::from_columns(&[rz1 * col_theta, rz1 * col_d, rz1 * col_a, rz1 * col_phi])
    }

    pub fn t2(&self) -> Vector3<f64> {
        self.t2
    }
}

/// Derivative of the motor-frame point with respect to the calibration vector.
///
/// Columns are `d p_M / d[theta_bar, d_bar, a_bar, phi_bar]`. Rotational
/// perturbations about z (theta) and x (phi) compose additively with the angle,
/// so each column is also the plain partial derivative.
pub fn point_jacobian_wrt_calib(
    x: &CalibrationVector,
    theta1: f64,
    d1: f64,
    p_l: &Vector3<f64>,
) -> Matrix3x4<f64> {
    MountModel::new(x, d1).jacobian(theta1, p_l)
}
