//! Synthetic spinning-LiDAR scans of finite planar scenes.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angles::normalize_angle;
use crate::dh::{rot_z, CalibrationVector, MountKind, MountModel, RigidTransform};
use crate::error::{Error, Result};
use crate::uncertainty::{tangent_basis, NoiseModel};

/// Default motor speed, rad/s.
pub const DEFAULT_MOTOR_SPEED: f64 = 7.85;

/// Distance from the origin to each face of the built-in box scenes, metres.
pub const BOX_DISTANCE: f64 = 3.0;

const BEAMS_PER_CHUNK: usize = 8192;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// One laser return in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserPoint {
    pub position: Vector3<f64>,
    pub timestamp: f64,
    pub depth: Option<f64>,
    pub bearing: Option<Vector3<f64>>,
}

impl LaserPoint {
    pub fn new(position: Vector3<f64>, timestamp: f64) -> Self {
        Self { position, timestamp, depth: None, bearing: None }
    }

    pub fn depth(&self) -> f64 {
        self.depth.unwrap_or_else(|| self.position.norm())
    }

    pub fn bearing(&self) -> Vector3<f64> {
        self.bearing.unwrap_or_else(|| self.position.normalize())
    }
}

/// A LiDAR sweep plus the encoder samples recorded alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFrame {
    pub points: Vec<LaserPoint>,
    /// `(timestamp, angle)`
    pub encoder_samples: Vec<(f64, f64)>,
    pub frame_span: f64,
}

impl ScanFrame {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// A finite rectangular patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualPlane {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub half_extents: Vector2<f64>,
    /// In-plane axis of the first half extent; the second is `normal x u_axis`.
    pub u_axis: Vector3<f64>,
}

impl VirtualPlane {
    /// `normal` is normalized here.
    pub fn new(center: Vector3<f64>, normal: Vector3<f64>, half_extents: Vector2<f64>) -> Result<Self> {
        let len = normal.norm();
        if !(len > 1e-12 && len.is_finite()) {
            return Err(Error::InvalidArgument("plane normal must be nonzero".into()));
        }
        if !(half_extents.x > 0.0 && half_extents.y > 0.0) {
            return Err(Error::InvalidArgument("plane half extents must be positive".into()));
        }
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("plane center must be finite".into()));
        }
        let normal = normal / len;
        let u_axis = tangent_basis(&normal)?.column(0).into_owned();
        Ok(Self { center, normal, half_extents, u_axis })
    }

    /// Like [`Self::new`] with a chosen in-plane axis, projected into the plane.
    pub fn with_axis(center: Vector3<f64>, normal: Vector3<f64>, half_extents: Vector2<f64>, u_axis: Vector3<f64>) -> Result<Self> {
        let mut plane = Self::new(center, normal, half_extents)?;
        let u = u_axis - plane.normal * plane.normal.dot(&u_axis);
        if !(u.norm() > 1e-9) {
            return Err(Error::InvalidArgument("plane axis must not be parallel to the normal".into()));
        }
        plane.u_axis = u.normalize();
        Ok(plane)
    }

    /// In-plane axes matching `half_extents`.
    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.u_axis, self.normal.cross(&self.u_axis))
    }

    pub fn bounding_radius(&self) -> f64 {
        self.half_extents.norm()
    }

    /// Signed distance of `p` from the infinite plane.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.center))
    }

    /// Ray parameter of the hit with this patch, if any.
    pub fn intersect(&self, origin: &Vector3<f64>, direction: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(direction);
        if denom.abs() < 1e-12 {
            return None;
        }
        let r = self.normal.dot(&(self.center - origin)) / denom;
        if !(r > 1e-9) {
            return None;
        }
        let local = origin + direction * r - self.center;
        let (e1, e2) = self.axes();
        (e1.dot(&local).abs() <= self.half_extents.x && e2.dot(&local).abs() <= self.half_extents.y).then_some(r)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            center: t.apply(&self.center),
            normal: t.apply_vector(&self.normal),
            half_extents: self.half_extents,
            u_axis: t.apply_vector(&self.u_axis),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub planes: Vec<VirtualPlane>,
}

impl SceneSpec {
    pub const BUILTIN: [&'static str; 7] =
        ["scene_1", "scene_2", "scene_3", "scene_4", "scene_5", "scene_6", "planes40"];

    pub fn new(name: impl Into<String>, planes: Vec<VirtualPlane>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::InvalidArgument("scene has no planes".into()));
        }
        Ok(Self { name: name.into(), planes })
    }

    /// Box faces (10 m x 10 m at [`BOX_DISTANCE`]) for `scene_1`..`scene_6`,
    /// or the 40-plane scene `planes40`.
    pub fn builtin(name: &str) -> Result<Self> {
        // +x -x +y -y +z -z
        let faces: &[usize] = match name {
            "scene_1" => &[0, 1, 2, 3, 4, 5],
            "scene_2" => &[0, 1, 4, 5],
            "scene_3" => &[2, 3, 4, 5],
            "scene_4" => &[0],
            "scene_5" => &[2],
            "scene_6" => &[5],
            "planes40" => return Ok(Self::planes40()),
            _ => return Err(Error::InvalidArgument(format!("unknown built-in scene '{name}'"))),
        };
        let planes = faces
            .iter()
            .map(|&f| {
                let mut n = Vector3::zeros();
                n[f / 2] = if f % 2 == 0 { 1.0 } else { -1.0 };
                VirtualPlane::new(n * BOX_DISTANCE, -n, Vector2::new(5.0, 5.0)).expect("valid face")
            })
            .collect();
        Self::new(name, planes)
    }

    /// 40 patches of 4 m x 4 m spread over all directions at 4 to 10 m, with
    /// normals tilted away from the line of sight.
    pub fn planes40() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n = 40;
        let planes = (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let az = TAU * GOLDEN * i as f64;
                let dir = Vector3::new(r * az.cos(), r * az.sin(), z);
                let dist: f64 = rng.random_range(4.0..10.0);
                let tilt = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let normal = -dir + tilt * 0.35;
                VirtualPlane::new(dir * dist, normal, Vector2::new(2.0, 2.0)).expect("valid patch")
            })
            .collect();
        Self { name: "planes40".into(), planes }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self { name: self.name.clone(), planes: self.planes.iter().map(|p| p.transformed(t)).collect() }
    }
}

/// Nearest hit within `range_max`: `(point, range, plane index)`. Equal
/// ranges go to the lower plane index.
pub fn ray_cast(
    origin: &Vector3<f64>,
    direction: &Vector3<f64>,
    scene: &SceneSpec,
    range_max: f64,
) -> Option<(Vector3<f64>, f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, plane) in scene.planes.iter().enumerate() {
        // skip patches whose bounding sphere the ray line misses
        let to_center = plane.center - origin;
        let along = to_center.dot(direction);
        let radius = plane.bounding_radius() * (1.0 + 1e-9) + 1e-9;
        if (to_center - direction * along).norm_squared() > radius * radius {
            continue;
        }
        if let Some(r) = plane.intersect(origin, direction) {
            if r <= range_max && best.is_none_or(|(b, _)| r < b) {
                best = Some((r, i));
            }
        }
    }
    best.map(|(r, i)| (origin + direction * r, r, i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorKind {
    /// 360 degree horizontal FOV swept about the LiDAR z axis.
    Mid360Like,
    /// Forward-looking (LiDAR x) rosette pattern.
    AviaLike,
}

impl SensorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Mid360Like => "mid360",
            SensorKind::AviaLike => "avia",
        }
    }

    /// The mount kind the sensor is normally paired with.
    pub fn default_mount(self) -> MountKind {
        match self {
            SensorKind::Mid360Like => MountKind::SpinningOmni,
            SensorKind::AviaLike => MountKind::SpinningNonOmni,
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mid360" | "mid360-like" | "omni" => Ok(SensorKind::Mid360Like),
            "avia" | "avia-like" | "non-omni" => Ok(SensorKind::AviaLike),
            _ => Err(Error::InvalidArgument(format!("unknown sensor '{s}' (expected mid360 or avia)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub kind: SensorKind,
    pub range_max: f64,
    pub points_per_second: f64,
    /// Degrees.
    pub fov_h: f64,
    /// Degrees.
    pub fov_v: f64,
    pub encoder_rate: f64,
    pub scan_rate: f64,
    pub noise: NoiseModel,
}

impl SensorModel {
    /// Noise levels for the simulated sensors. Not vendor figures.
    pub const DEFAULT_NOISE: NoiseModel =
        NoiseModel { sigma_depth: 0.005, sigma_bearing: 2e-4, sigma_encoder: 2e-4 };

    pub fn mid360_like() -> Self {
        Self {
            kind: SensorKind::Mid360Like,
            range_max: 40.0,
            points_per_second: 200_000.0,
            fov_h: 360.0,
            fov_v: 59.0,
            encoder_rate: 200.0,
            scan_rate: 10.0,
            noise: NoiseModel::zero(),
        }
    }

    pub fn avia_like() -> Self {
        Self {
            kind: SensorKind::AviaLike,
            range_max: 100.0,
            points_per_second: 240_000.0,
            fov_h: 70.4,
            fov_v: 77.2,
            encoder_rate: 200.0,
            scan_rate: 10.0,
            noise: NoiseModel::zero(),
        }
    }

    pub fn for_kind(kind: SensorKind) -> Self {
        match kind {
            SensorKind::Mid360Like => Self::mid360_like(),
            SensorKind::AviaLike => Self::avia_like(),
        }
    }

    pub fn with_noise(self, noise: NoiseModel) -> Self {
        Self { noise, ..self }
    }

    pub fn with_default_noise(self) -> Self {
        self.with_noise(Self::DEFAULT_NOISE)
    }

    pub fn with_density(self, points_per_second: f64) -> Self {
        Self { points_per_second, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("range_max", self.range_max),
            ("points_per_second", self.points_per_second),
            ("encoder_rate", self.encoder_rate),
            ("scan_rate", self.scan_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("fov_h", self.fov_h), ("fov_v", self.fov_v)] {
            if !(v > 0.0 && v <= 360.0) {
                return Err(Error::InvalidArgument(format!("{name} must be in (0, 360], got {v}")));
            }
        }
        self.noise.validate()
    }

    /// Unit beam direction in the LiDAR frame for beam `k` fired at `t`.
    pub fn beam_direction(&self, k: usize, t: f64) -> Vector3<f64> {
        let half_h = 0.5 * self.fov_h.to_radians();
        let half_v = 0.5 * self.fov_v.to_radians();
        let (az, el) = match self.kind {
            SensorKind::Mid360Like => {
                let sweep = (self.scan_rate * t).fract();
                let az = if self.fov_h >= 360.0 { TAU * sweep - PI } else { half_h * (2.0 * sweep - 1.0) };
                let el = half_v * (2.0 * (k as f64 * GOLDEN).fract() - 1.0);
                (az, el)
            }
            SensorKind::AviaLike => {
                // two counter-rotating circles trace a rosette filling the unit disc
                let a = TAU * 1231.0 * t;
                let b = -TAU * 1847.3 * t;
                let u = 0.5 * (a.cos() + b.cos());
                let v = 0.5 * (a.sin() + b.sin());
                (half_h * u, half_v * v)
            }
        };
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub sensor: SensorModel,
    /// rad/s
    pub motor_speed: f64,
    /// Seconds.
    pub duration: f64,
    pub d1: f64,
    /// Motor frame in the world.
    pub base_pose: RigidTransform,
}

impl ScanConfig {
    /// Default motor speed, two full revolutions, `d1 = 0`, base at the origin.
    pub fn new(sensor: SensorModel) -> Self {
        Self {
            sensor,
            motor_speed: DEFAULT_MOTOR_SPEED,
            duration: 2.0 * TAU / DEFAULT_MOTOR_SPEED,
            d1: 0.0,
            base_pose: RigidTransform::identity(),
        }
    }

    pub fn with_revolutions(self, revolutions: f64) -> Self {
        Self { duration: revolutions * TAU / self.motor_speed.abs(), ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        if !(self.motor_speed.is_finite() && self.motor_speed != 0.0) {
            return Err(Error::InvalidArgument("motor speed must be nonzero".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        if !self.d1.is_finite() {
            return Err(Error::InvalidArgument("d1 must be finite".into()));
        }
        Ok(())
    }

    pub fn beam_count(&self) -> usize {
        (self.sensor.points_per_second * self.duration).floor() as usize
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulates a static-base scan with the motor spinning at constant speed.
///
/// Beam `k` fires at `k / points_per_second`; the true motor angle is
/// `motor_speed * t`. The encoder is sampled at `encoder_rate` from `t = 0`
/// past the last beam, with Gaussian angle noise.
pub fn generate_scan(scene: &SceneSpec, gt: &CalibrationVector, config: &ScanConfig, seed: u64) -> Result<ScanFrame> {
    config.validate()?;
    let sensor = config.sensor;
    let noise = sensor.noise;
    let model = MountModel::new(gt, config.d1);
    let fixed = model.fixed_part();
    let base = config.base_pose;
    let beams = config.beam_count();
    let chunks = beams.div_ceil(BEAMS_PER_CHUNK);

    let points: Vec<LaserPoint> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let mut out = Vec::new();
            for k in c * BEAMS_PER_CHUNK..((c + 1) * BEAMS_PER_CHUNK).min(beams) {
                let t = k as f64 / sensor.points_per_second;
                let dir_l = sensor.beam_direction(k, t);
                let spin = rot_z(config.motor_speed * t);
                let rot = base.rotation * spin * fixed.rotation;
                let origin = base.apply(&(spin * fixed.translation));
                let draws = [gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)];
                let Some((_, range, _)) = ray_cast(&origin, &(rot * dir_l), scene, sensor.range_max) else {
                    continue;
                };
                let (depth, bearing) = if noise.sigma_depth == 0.0 && noise.sigma_bearing == 0.0 {
                    (range, dir_l)
                } else {
                    let n = tangent_basis(&dir_l).expect("unit beam");
                    let dw = n * Vector2::new(draws[1], draws[2]) * noise.sigma_bearing;
                    (range + noise.sigma_depth * draws[0], Rotation3::new(dw) * dir_l)
                };
                if !(depth > 0.0) {
                    continue;
                }
                out.push(LaserPoint { position: bearing * depth, timestamp: t, depth: Some(depth), bearing: Some(bearing) });
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    if points.is_empty() {
        return Err(Error::EmptyScan);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 1.0 / sensor.encoder_rate;
    let last_beam = (beams.saturating_sub(1)) as f64 / sensor.points_per_second;
    let samples = (last_beam / period).floor() as usize + 2;
    let encoder_samples = (0..samples)
        .map(|i| {
            let t = i as f64 * period;
            (t, normalize_angle(config.motor_speed * t + noise.sigma_encoder * gauss(&mut rng)))
        })
        .collect();

    Ok(ScanFrame { points, encoder_samples, frame_span: config.duration })
}

/// One draw of the ground-truth distribution for a mount kind.
///
/// Omni draws with `phi_bar` within 5 degrees of 0 or pi are redrawn, since
/// those mounts are unobservable.
pub fn sample_ground_truth(mount: MountKind, seed: u64) -> CalibrationVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d: f64 = rng.random_range(-0.1..=0.1);
    let a: f64 = rng.random_range(-0.1..=0.1);
    match mount {
        MountKind::SpinningOmni => {
            let theta: f64 = rng.random_range(-PI..=PI);
            let band = 5f64.to_radians();
            let phi = loop {
                let phi: f64 = rng.random_range(0.0..=PI);
                if phi > band && phi < PI - band {
                    break phi;
                }
            };
            CalibrationVector::new(mount, theta, d, a, phi)
        }
        MountKind::SpinningNonOmni => {
            let theta: f64 = rng.random_range(-PI / 8.0..=PI / 8.0);
            let phi: f64 = rng.random_range(-PI..=PI);
            CalibrationVector::new(mount, theta, d, a, phi)
        }
    }
}

/// Adds independent zero-mean Gaussian noise to each free parameter.
pub fn perturb_initial(gt: &CalibrationVector, rot_sigma: f64, trans_sigma: f64, seed: u64) -> CalibrationVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = [gauss(&mut rng), gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)];
    CalibrationVector::new(
        gt.kind,
        gt.theta_bar + rot_sigma * draws[0],
        gt.d_bar + trans_sigma * draws[1],
        gt.a_bar + trans_sigma * draws[2],
        gt.phi_bar + rot_sigma * draws[3],
    )
}
