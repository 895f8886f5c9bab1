//! Plane-thickness cost, its derivatives, and the Levenberg-Marquardt solver.
//!
//! The cost of a calibration vector `x` is the sum of the smallest covariance
//! eigenvalue of every planar feature extracted from the motor-frame cloud.
//! The optimizer works in rounds: each round re-voxelizes the cloud at the
//! scheduled root size, then runs damped Gauss-Newton steps against that
//! frozen feature membership until the cost stops dropping.

use std::fmt;

use nalgebra::{Matrix4, SymmetricEigen, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dh::{CalibrationVector, MountKind, MountModel};
use crate::error::{Error, Result};
use crate::plane::{adaptive_voxelize, PlaneFeature, PlaneStats, VoxelizationConfig};
use crate::sim::ScanFrame;
use crate::sum::NeumaierSum;
use crate::uncertainty::interpolate_encoder;

/// Smallest `lambda_mid - lambda_min` (m^2) for a feature to enter the
/// derivatives.
pub const DEFAULT_EIGENGAP_FLOOR: f64 = 1e-9;

/// Result records flag a degenerate mount when the Hessian's smallest
/// eigenvalue falls below this fraction of its largest.
pub const DEGENERACY_RATIO: f64 = 1e-5;

/// LiDAR points paired with their interpolated encoder angles.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScan {
    points: Vec<Vector3<f64>>,
    theta: Vec<f64>,
    // (cos, sin) of theta
    spin: Vec<(f64, f64)>,
}

impl PreparedScan {
    /// Interpolates an encoder angle for every point. Fails on the first point
    /// whose timestamp is not bracketed by the encoder stream.
    pub fn from_scan(scan: &ScanFrame) -> Result<Self> {
        if scan.points.is_empty() {
            return Err(Error::EmptyScan);
        }
        let enc = &scan.encoder_samples;
        if enc.len() < 2 {
            return Err(Error::InvalidArgument("encoder stream needs at least two samples".into()));
        }
        if enc.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidArgument("encoder timestamps must be strictly increasing".into()));
        }
        let mut points = Vec::with_capacity(scan.points.len());
        let mut theta = Vec::with_capacity(scan.points.len());
        for lp in &scan.points {
            let t = lp.timestamp;
            if !(t >= enc[0].0 && t <= enc[enc.len() - 1].0) {
                return Err(Error::UncoveredTimestamp { t });
            }
            // first sample strictly after t, clamped so [a, b] is a real interval
            let b = enc.partition_point(|s| s.0 <= t).clamp(1, enc.len() - 1);
            let (ta, tha) = enc[b - 1];
            let (tb, thb) = enc[b];
            theta.push(interpolate_encoder(tha, thb, ta, tb, t)?);
            points.push(lp.position);
        }
        Ok(Self::from_parts(points, theta))
    }

    /// Builds a prepared scan from LiDAR points and known spin angles.
    pub fn from_parts(points: Vec<Vector3<f64>>, theta: Vec<f64>) -> Self {
        assert_eq!(points.len(), theta.len(), "one angle per point");
        let spin = theta.iter().map(|t| (t.cos(), t.sin())).collect();
        Self { points, theta, spin }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// All points mapped into the motor frame under `x`.
    pub fn to_motor(&self, x: &CalibrationVector, d1: f64) -> Vec<Vector3<f64>> {
        let model = MountModel::new(x, d1);
        self.points
            .par_iter()
            .zip(self.spin.par_iter())
            .map(|(p, &(c, s))| spin(c, s, &model.pre_spin(p)))
            .collect()
    }
}

#[inline]
fn spin(c: f64, s: f64, v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Sum of `lambda_min` over the features extracted at `voxel.root_size`.
pub fn total_cost(
    scan: &PreparedScan,
    x: &CalibrationVector,
    d1: f64,
    voxel: &VoxelizationConfig,
) -> Result<(f64, Vec<PlaneFeature>)> {
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let cloud = scan.to_motor(x, d1);
    let features = adaptive_voxelize(&cloud, voxel);
    if features.is_empty() {
        return Err(Error::NoFeatures { root_size: voxel.root_size });
    }
    let cost = features.iter().map(|f| f.stats.lambda_min()).collect::<NeumaierSum>().value();
    Ok((cost, features))
}

/// Cost of `x` with the feature membership held fixed.
pub fn frozen_cost(scan: &PreparedScan, x: &CalibrationVector, d1: f64, features: &[PlaneFeature]) -> f64 {
    let model = MountModel::new(x, d1);
    features
        .par_iter()
        .map(|f| {
            let pts: Vec<Vector3<f64>> = f
                .point_indices
                .iter()
                .map(|&i| {
                    let (c, s) = scan.spin[i];
                    spin(c, s, &model.pre_spin(&scan.points[i]))
                })
                .collect();
            PlaneStats::from_points(&pts).map(|s| s.lambda_min()).unwrap_or(0.0)
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .collect::<NeumaierSum>()
        .value()
}

/// Second-derivative model used for the Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// Eigenvector held fixed; positive semidefinite.
    #[default]
    GaussNewton,
    /// Adds the eigenvector-rotation term. Exact in the point coordinates but
    /// ignores the curvature of the point map itself; may be indefinite.
    Exact,
}

/// Cost, gradient and Hessian over a frozen feature set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    /// Includes skipped features.
    pub cost: f64,
    pub gradient: Vector4<f64>,
    pub hessian: Matrix4<f64>,
    pub used: usize,
    pub skipped: usize,
}

struct FeatureTerms {
    cost: f64,
    grad: Vector4<f64>,
    hess: Matrix4<f64>,
    used: bool,
}

/// Assembles the gradient and Hessian of the cost at `x`, recomputing each
/// feature's statistics from its member points.
///
/// Features whose eigengap is below `eigengap_floor` contribute to the cost
/// but not to the derivatives.
pub fn cost_gradient_hessian(
    scan: &PreparedScan,
    x: &CalibrationVector,
    d1: f64,
    features: &[PlaneFeature],
    mode: HessianMode,
    eigengap_floor: f64,
) -> Result<Derivatives> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no features to differentiate"));
    }
    let model = MountModel::new(x, d1);
    let terms: Vec<FeatureTerms> = features
        .par_iter()
        .map(|f| feature_terms(scan, &model, f, mode, eigengap_floor))
        .collect();

    let mut cost = NeumaierSum::new();
    let mut gradient = Vector4::zeros();
    let mut hessian = Matrix4::zeros();
    let mut used = 0;
    for t in &terms {
        cost += t.cost;
        if t.used {
            gradient += t.grad;
            hessian += t.hess;
            used += 1;
        }
    }
    let skipped = terms.len() - used;
    if used == 0 {
        return Err(Error::AllFeaturesDegenerate { count: skipped });
    }
    let hessian = (hessian + hessian.transpose()) * 0.5;
    Ok(Derivatives { cost: cost.value(), gradient, hessian, used, skipped })
}

fn feature_terms(
    scan: &PreparedScan,
    model: &MountModel,
    f: &PlaneFeature,
    mode: HessianMode,
    eigengap_floor: f64,
) -> FeatureTerms {
    let pts: Vec<Vector3<f64>> = f
        .point_indices
        .iter()
        .map(|&i| {
            let (c, s) = scan.spin[i];
            spin(c, s, &model.pre_spin(&scan.points[i]))
        })
        .collect();
    let stats = PlaneStats::from_points(&pts).expect("features are non-empty");
    let cost = stats.lambda_min();
    if !(stats.eigengap() > eigengap_floor) {
        return FeatureTerms { cost, grad: Vector4::zeros(), hess: Matrix4::zeros(), used: false };
    }
    let n = pts.len() as f64;
    let u = stats.eigenvectors.column(0).into_owned();
    let q = stats.centroid;

    let jacobians: Vec<_> = f
        .point_indices
        .iter()
        .map(|&i| model.jacobian(scan.theta[i], &scan.points[i]))
        .collect();

    let mut grad = Vector4::zeros();
    let mut sum_s = Vector4::zeros();
    let mut sum_ss = Matrix4::zeros();
    for (p, j) in pts.iter().zip(&jacobians) {
        let s = j.transpose() * u;
        let a = u.dot(&(p - q));
        grad += s * a;
        sum_s += s;
        sum_ss += s * s.transpose();
    }
    grad *= 2.0 / n;
    let mut hess = (sum_ss - sum_s * sum_s.transpose() / n) * (2.0 / n);

    if mode == HessianMode::Exact {
        for k in 1..3 {
            let un = stats.eigenvectors.column(k).into_owned();
            let mut d = Vector4::zeros();
            for (p, j) in pts.iter().zip(&jacobians) {
                let r = p - q;
                d += j.transpose() * un * u.dot(&r) + j.transpose() * u * un.dot(&r);
            }
            d /= n;
            hess += d * d.transpose() * (2.0 / (stats.eigenvalues[0] - stats.eigenvalues[k]));
        }
    }
    FeatureTerms { cost, grad, hess, used: true }
}

/// Root voxel size per optimizer round. The last stage repeats indefinitely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// `(rounds, root_size)`; the round count of the last stage is ignored.
    pub stages: Vec<(usize, f64)>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { stages: vec![(2, 1.0), (2, 0.5), (1, 0.25)] }
    }
}

impl Schedule {
    pub fn new(stages: Vec<(usize, f64)>) -> Result<Self> {
        let s = Self { stages };
        s.validate()?;
        Ok(s)
    }

    /// A single root size for every round.
    pub fn constant(root_size: f64) -> Self {
        Self { stages: vec![(1, root_size)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument("schedule has no stages".into()));
        }
        for (i, &(rounds, size)) in self.stages.iter().enumerate() {
            if rounds == 0 || !(size > 0.0 && size.is_finite()) {
                return Err(Error::InvalidArgument(format!("bad schedule stage ({rounds}, {size})")));
            }
            if i > 0 && !(size < self.stages[i - 1].1) {
                return Err(Error::InvalidArgument("schedule root sizes must strictly decrease".into()));
            }
        }
        Ok(())
    }

    /// Root size for a 1-based round number.
    pub fn root_size(&self, round: usize) -> f64 {
        let mut end = 0;
        for &(rounds, size) in &self.stages {
            end += rounds;
            if round <= end {
                return size;
            }
        }
        self.stages[self.stages.len() - 1].1
    }

    pub fn final_root_size(&self) -> f64 {
        self.stages[self.stages.len() - 1].1
    }
}

/// Everything `calibrate` needs.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub scan: PreparedScan,
    pub mount: MountKind,
    pub initial: CalibrationVector,
    pub d1: f64,
    pub schedule: Schedule,
    /// Absolute cost change between rounds of equal root size.
    pub convergence_tol: f64,
    /// Maximum number of rounds.
    pub max_iterations: usize,
    /// Root size is taken from the schedule.
    pub voxel: VoxelizationConfig,
    pub hessian_mode: HessianMode,
    pub eigengap_floor: f64,
    /// Dimensionless damping in `(H + mu diag(H)) delta = -g`.
    pub initial_mu: f64,
}

impl CalibrationProblem {
    pub fn new(scan: &ScanFrame, initial: CalibrationVector, d1: f64) -> Result<Self> {
        Ok(Self::from_prepared(PreparedScan::from_scan(scan)?, initial, d1))
    }

    pub fn from_prepared(scan: PreparedScan, initial: CalibrationVector, d1: f64) -> Self {
        Self {
            scan,
            mount: initial.kind,
            initial,
            d1,
            schedule: Schedule::default(),
            convergence_tol: 1e-6,
            max_iterations: 50,
            voxel: VoxelizationConfig::default(),
            hessian_mode: HessianMode::GaussNewton,
            eigengap_floor: DEFAULT_EIGENGAP_FLOOR,
            initial_mu: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scan.is_empty() {
            return Err(Error::EmptyScan);
        }
        if self.mount != self.initial.kind {
            return Err(Error::InvalidArgument(format!(
                "initial vector is {} but the problem mount is {}",
                self.initial.kind, self.mount
            )));
        }
        if !self.initial.is_finite() || !self.d1.is_finite() {
            return Err(Error::InvalidArgument("initial estimate must be finite".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidArgument("convergence_tol must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.initial_mu > 0.0) {
            return Err(Error::InvalidArgument("initial_mu must be positive".into()));
        }
        self.schedule.validate()?;
        self.voxel.validate()
    }

    fn voxel_at(&self, round: usize) -> VoxelizationConfig {
        self.voxel.with_root_size(self.schedule.root_size(round))
    }

    /// Re-voxelizes at `root_size` around `x` and evaluates the derivatives.
    pub fn analyze(&self, x: &CalibrationVector, root_size: f64) -> Result<(Derivatives, Vec<PlaneFeature>)> {
        let voxel = self.voxel.with_root_size(root_size);
        let (_, features) = total_cost(&self.scan, x, self.d1, &voxel)?;
        let d = cost_gradient_hessian(&self.scan, x, self.d1, &features, self.hessian_mode, self.eigengap_floor)?;
        Ok((d, features))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Voxelization produced no planar features.
    NoFeatures,
    /// Every feature failed the eigengap floor.
    DegenerateFeatures,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max-iterations",
            Termination::NoFeatures => "no-features",
            Termination::DegenerateFeatures => "degenerate-features",
        };
        f.write_str(s)
    }
}

/// One LM step attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: usize,
    pub step: usize,
    pub root_size: f64,
    pub cost: f64,
    pub candidate_cost: f64,
    pub mu: f64,
    pub step_norm: f64,
    pub features: usize,
    pub skipped: usize,
    pub accepted: bool,
}

impl TraceRecord {
    pub const CSV_HEADER: &'static str =
        "round,step,root_size,cost,candidate_cost,mu,step_norm,features,skipped,accepted";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub estimate: CalibrationVector,
    pub final_cost: f64,
    /// Voxelization rounds run.
    pub iterations: usize,
    pub hessian: Matrix4<f64>,
    pub hessian_min_eigenvalue: f64,
    pub per_parameter_diag: Vector4<f64>,
    pub converged: bool,
    pub termination: Termination,
    /// Smallest to largest Hessian eigenvalue below [`DEGENERACY_RATIO`].
    pub degenerate: bool,
    pub features: usize,
    pub skipped_features: usize,
    pub trace: Vec<TraceRecord>,
}

fn degenerate_result(x: CalibrationVector, iterations: usize, termination: Termination, trace: Vec<TraceRecord>) -> CalibrationResult {
    CalibrationResult {
        estimate: x,
        final_cost: f64::NAN,
        iterations,
        hessian: Matrix4::zeros(),
        hessian_min_eigenvalue: 0.0,
        per_parameter_diag: Vector4::zeros(),
        converged: false,
        termination,
        degenerate: true,
        features: 0,
        skipped_features: 0,
        trace,
    }
}

fn solve_damped(d: &Derivatives, mu: f64) -> Option<Vector4<f64>> {
    let diag = d.hessian.diagonal().map(f64::abs);
    let floor = 1e-6 * diag.max().max(f64::MIN_POSITIVE);
    let mut a = d.hessian;
    for k in 0..4 {
        a[(k, k)] += mu * diag[k].max(floor);
    }
    let delta = a.cholesky()?.solve(&(-d.gradient));
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

/// Runs the coarse-to-fine Levenberg-Marquardt calibration.
///
/// Returns `Err` only for an invalid problem. Feature starvation and
/// degenerate feature sets are reported through [`Termination`].
pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationResult> {
    problem.validate()?;
    let d1 = problem.d1;
    let mut x = problem.initial;
    let mut mu = problem.initial_mu;
    let mut trace = Vec::new();
    let mut starts: Vec<(f64, f64)> = Vec::new();
    let mut converged = false;
    let mut rounds = 0;
    let mut latest: Option<Derivatives> = None;

    for round in 1..=problem.max_iterations {
        rounds = round;
        let voxel = problem.voxel_at(round);
        let features = match total_cost(&problem.scan, &x, d1, &voxel) {
            Ok((_, f)) => f,
            Err(Error::NoFeatures { .. }) => return Ok(degenerate_result(x, round, Termination::NoFeatures, trace)),
            Err(e) => return Err(e),
        };
        let mode = problem.hessian_mode;
        let floor = problem.eigengap_floor;
        let mut d = match cost_gradient_hessian(&problem.scan, &x, d1, &features, mode, floor) {
            Ok(d) => d,
            Err(Error::AllFeaturesDegenerate { .. }) => {
                return Ok(degenerate_result(x, round, Termination::DegenerateFeatures, trace))
            }
            Err(e) => return Err(e),
        };
        latest = Some(d);

        // Matching any earlier start cost at this root size, not just the
        // previous one, also ends 2-cycles where a feature flickers across
        // the planarity threshold between rounds.
        if starts.iter().any(|&(size, cost)| size == voxel.root_size && (d.cost - cost).abs() < problem.convergence_tol) {
            converged = true;
            break;
        }
        starts.push((voxel.root_size, d.cost));

        let mut rejections = 0;
        let mut step = 0;
        while rejections < 10 {
            step += 1;
            let Some(delta) = solve_damped(&d, mu) else {
                mu = (mu * 3.0).min(1e12);
                rejections += 1;
                continue;
            };
            let candidate = x.step(&delta);
            let candidate_cost = frozen_cost(&problem.scan, &candidate, d1, &features);
            let accepted = candidate_cost < d.cost;
            trace.push(TraceRecord {
                round,
                step,
                root_size: voxel.root_size,
                cost: d.cost,
                candidate_cost,
                mu,
                step_norm: delta.norm(),
                features: features.len(),
                skipped: d.skipped,
                accepted,
            });
            if !accepted {
                mu = (mu * 3.0).min(1e12);
                rejections += 1;
                continue;
            }
            mu = (mu / 3.0).max(1e-12);
            let decrease = d.cost - candidate_cost;
            x = candidate;
            d = match cost_gradient_hessian(&problem.scan, &x, d1, &features, mode, floor) {
                Ok(d) => d,
                Err(Error::AllFeaturesDegenerate { .. }) => {
                    return Ok(degenerate_result(x, round, Termination::DegenerateFeatures, trace))
                }
                Err(e) => return Err(e),
            };
            latest = Some(d);
            if decrease < 0.1 * problem.convergence_tol {
                break;
            }
        }
    }

    let d = latest.expect("at least one round ran");
    let eig = SymmetricEigen::new(d.hessian).eigenvalues;
    let min_eig = eig.min();
    let max_eig = eig.max();
    Ok(CalibrationResult {
        estimate: x,
        final_cost: d.cost,
        iterations: rounds,
        hessian: d.hessian,
        hessian_min_eigenvalue: min_eig,
        per_parameter_diag: d.hessian.diagonal(),
        converged,
        termination: if converged { Termination::Converged } else { Termination::MaxIterations },
        degenerate: !(min_eig > DEGENERACY_RATIO * max_eig),
        features: d.used + d.skipped,
        skipped_features: d.skipped,
        trace,
    })
}
