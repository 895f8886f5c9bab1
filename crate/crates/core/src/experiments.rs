//! Batch experiments: Monte-Carlo accuracy, observability sweeps over the
//! mounting angles, and per-scene identifiability.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{calibrate, cost_gradient_hessian, total_cost, CalibrationProblem, CalibrationResult, PreparedScan, Schedule};
use crate::dh::{CalibrationVector, MountKind};
use crate::error::Result;
use crate::plane::VoxelizationConfig;
use crate::sim::{generate_scan, perturb_initial, sample_ground_truth, ScanConfig, SceneSpec, SensorKind, SensorModel};

/// Independent sub-seed for `(base, index, stream)`, via splitmix64.
pub fn derive_seed(base: u64, index: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Linear-interpolated percentile of unsorted values, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Solver knobs shared by the harnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub schedule: Schedule,
    pub convergence_tol: f64,
    pub max_iterations: usize,
    pub voxel: VoxelizationConfig,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            convergence_tol: 1e-6,
            max_iterations: 50,
            voxel: VoxelizationConfig::default(),
        }
    }
}

impl SolverSettings {
    pub fn problem(&self, scan: PreparedScan, initial: CalibrationVector, d1: f64) -> CalibrationProblem {
        CalibrationProblem {
            schedule: self.schedule.clone(),
            convergence_tol: self.convergence_tol,
            max_iterations: self.max_iterations,
            voxel: self.voxel,
            ..CalibrationProblem::from_prepared(scan, initial, d1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub scene: SceneSpec,
    pub mount: MountKind,
    pub scan: ScanConfig,
    pub trials: usize,
    /// Radians.
    pub rot_sigma: f64,
    /// Metres.
    pub trans_sigma: f64,
    pub seed: u64,
    pub solver: SolverSettings,
}

impl MonteCarloConfig {
    /// 5 degree / 0.05 m initial perturbations.
    pub fn new(scene: SceneSpec, mount: MountKind, scan: ScanConfig, trials: usize, seed: u64) -> Self {
        Self {
            scene,
            mount,
            scan,
            trials,
            rot_sigma: 5f64.to_radians(),
            trans_sigma: 0.05,
            seed,
            solver: SolverSettings::default(),
        }
    }
}

/// One Monte-Carlo trial, flat for CSV output. Angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub gt_theta: f64,
    pub gt_d: f64,
    pub gt_a: f64,
    pub gt_phi: f64,
    pub init_theta: f64,
    pub init_d: f64,
    pub init_a: f64,
    pub init_phi: f64,
    pub est_theta: f64,
    pub est_d: f64,
    pub est_a: f64,
    pub est_phi: f64,
    pub trans_err_mm: f64,
    pub angle_err_deg: f64,
    pub iterations: usize,
    pub converged: bool,
    pub hessian_min_eig: f64,
    pub points: usize,
    pub termination: String,
    /// Empty unless the trial failed before calibrating.
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub converged: usize,
    pub trans_p50_mm: f64,
    pub trans_p95_mm: f64,
    pub trans_max_mm: f64,
    pub angle_p50_deg: f64,
    pub angle_p95_deg: f64,
    pub angle_max_deg: f64,
}

impl MonteCarloSummary {
    pub fn from_rows(rows: &[TrialRow]) -> Self {
        let trans: Vec<f64> = rows.iter().map(|r| r.trans_err_mm).collect();
        let angle: Vec<f64> = rows.iter().map(|r| r.angle_err_deg).collect();
        Self {
            trials: rows.len(),
            converged: rows.iter().filter(|r| r.converged).count(),
            trans_p50_mm: percentile(&trans, 50.0),
            trans_p95_mm: percentile(&trans, 95.0),
            trans_max_mm: percentile(&trans, 100.0),
            angle_p50_deg: percentile(&angle, 50.0),
            angle_p95_deg: percentile(&angle, 95.0),
            angle_max_deg: percentile(&angle, 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub rows: Vec<TrialRow>,
    pub summary: MonteCarloSummary,
}

fn trial_row(trial: usize, seed: u64, gt: CalibrationVector, initial: CalibrationVector) -> TrialRow {
    TrialRow {
        trial,
        seed,
        gt_theta: gt.theta_bar,
        gt_d: gt.d_bar,
        gt_a: gt.a_bar,
        gt_phi: gt.phi_bar,
        init_theta: initial.theta_bar,
        init_d: initial.d_bar,
        init_a: initial.a_bar,
        init_phi: initial.phi_bar,
        est_theta: f64::NAN,
        est_d: f64::NAN,
        est_a: f64::NAN,
        est_phi: f64::NAN,
        trans_err_mm: f64::NAN,
        angle_err_deg: f64::NAN,
        iterations: 0,
        converged: false,
        hessian_min_eig: f64::NAN,
        points: 0,
        termination: String::new(),
        error: String::new(),
    }
}

/// Runs a single trial. Failures are recorded in the row.
pub fn run_trial(config: &MonteCarloConfig, trial: usize) -> TrialRow {
    let seed = derive_seed(config.seed, trial as u64, 0);
    let gt = sample_ground_truth(config.mount, derive_seed(seed, 0, 1));
    let initial = perturb_initial(&gt, config.rot_sigma, config.trans_sigma, derive_seed(seed, 0, 2));
    let mut row = trial_row(trial, seed, gt, initial);

    let outcome = generate_scan(&config.scene, &gt, &config.scan, derive_seed(seed, 0, 3)).and_then(|scan| {
        row.points = scan.points.len();
        let prepared = PreparedScan::from_scan(&scan)?;
        calibrate(&config.solver.problem(prepared, initial, config.scan.d1))
    });
    match outcome {
        Ok(result) => fill_result(&mut row, &result, &gt),
        Err(e) => row.error = e.to_string(),
    }
    row
}

fn fill_result(row: &mut TrialRow, result: &CalibrationResult, gt: &CalibrationVector) {
    let est = result.estimate;
    row.est_theta = est.theta_bar;
    row.est_d = est.d_bar;
    row.est_a = est.a_bar;
    row.est_phi = est.phi_bar;
    row.trans_err_mm = est.translation_error_mm(gt);
    row.angle_err_deg = est.angle_error_deg(gt);
    row.iterations = result.iterations;
    row.converged = result.converged;
    row.hessian_min_eig = result.hessian_min_eigenvalue;
    row.termination = result.termination.to_string();
}

/// Runs all trials (concurrently) and summarizes them. Rows are in trial
/// order.
pub fn monte_carlo(config: &MonteCarloConfig) -> MonteCarloReport {
    let rows: Vec<TrialRow> = (0..config.trials).into_par_iter().map(|i| run_trial(config, i)).collect();
    let summary = MonteCarloSummary::from_rows(&rows);
    MonteCarloReport { rows, summary }
}

/// `-180, -180 + step, ..., 180` in degrees.
pub fn angle_grid_deg(step: f64) -> Vec<f64> {
    let n = (360.0 / step).round() as usize;
    (0..=n).map(|i| -180.0 + i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityConfig {
    pub scene: SceneSpec,
    pub mount: MountKind,
    pub scan: ScanConfig,
    pub theta_grid_deg: Vec<f64>,
    pub phi_grid_deg: Vec<f64>,
    pub d_bar: f64,
    pub a_bar: f64,
    /// Root voxel size for the Hessian evaluation.
    pub root_size: f64,
    pub seed: u64,
}

impl ObservabilityConfig {
    /// Full 10 degree grid on both angles.
    pub fn new(scene: SceneSpec, mount: MountKind, scan: ScanConfig, seed: u64) -> Self {
        Self {
            scene,
            mount,
            scan,
            theta_grid_deg: angle_grid_deg(10.0),
            phi_grid_deg: angle_grid_deg(10.0),
            d_bar: 0.1,
            a_bar: 0.1,
            root_size: 0.5,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityCell {
    pub theta_bar_deg: f64,
    pub phi_bar_deg: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub features: usize,
    pub points: usize,
}

/// Where the smallest Hessian eigenvalue collapses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilitySummary {
    /// "theta" or "phi": the angle whose profile has the deepest valley.
    pub axis: String,
    /// Grid angles whose profile value is below a tenth of the profile median.
    pub valley_deg: Vec<f64>,
    /// Profile median over profile minimum.
    pub contrast: f64,
    /// Median over the other angle, per grid value of each angle.
    pub theta_profile: Vec<(f64, f64)>,
    pub phi_profile: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub cells: Vec<ObservabilityCell>,
    pub summary: ObservabilitySummary,
}

impl ObservabilityReport {
    pub fn cell(&self, theta_deg: f64, phi_deg: f64) -> Option<&ObservabilityCell> {
        self.cells
            .iter()
            .find(|c| (c.theta_bar_deg - theta_deg).abs() < 1e-9 && (c.phi_bar_deg - phi_deg).abs() < 1e-9)
    }
}

/// Smallest and largest Hessian eigenvalue at the ground truth of a fresh
/// noise-free scan.
pub fn hessian_at_truth(
    scene: &SceneSpec,
    gt: &CalibrationVector,
    scan: &ScanConfig,
    root_size: f64,
    seed: u64,
) -> Result<(f64, f64, usize, usize)> {
    let frame = generate_scan(scene, gt, scan, seed)?;
    let prepared = PreparedScan::from_scan(&frame)?;
    let voxel = VoxelizationConfig::default().with_root_size(root_size);
    let (_, features) = total_cost(&prepared, gt, scan.d1, &voxel)?;
    let d = cost_gradient_hessian(&prepared, gt, scan.d1, &features, Default::default(), crate::calib::DEFAULT_EIGENGAP_FLOOR)?;
    let eig = SymmetricEigen::new(d.hessian).eigenvalues;
    Ok((eig.min(), eig.max(), features.len(), prepared.len()))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn profile(cells: &[ObservabilityCell], grid: &[f64], key: impl Fn(&ObservabilityCell) -> f64) -> Vec<(f64, f64)> {
    grid.iter()
        .map(|&g| {
            let mut v: Vec<f64> = cells.iter().filter(|c| (key(c) - g).abs() < 1e-9).map(|c| c.lambda_min.max(0.0)).collect();
            (g, if v.is_empty() { f64::NAN } else { median(&mut v) })
        })
        .collect()
}

fn valley(profile: &[(f64, f64)]) -> (f64, Vec<f64>) {
    let mut values: Vec<f64> = profile.iter().map(|p| p.1).filter(|v| v.is_finite()).collect();
    if values.is_empty() {
        return (f64::NAN, Vec::new());
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let med = median(&mut values);
    let contrast = if min > 0.0 { med / min } else { f64::INFINITY };
    let angles = profile.iter().filter(|p| p.1 < 0.1 * med).map(|p| p.0).collect();
    (contrast, angles)
}

/// Ground-truth Hessian eigenvalues over a grid of mounting angles.
/// Cells that fail (no features) record NaN.
pub fn observability_sweep(config: &ObservabilityConfig) -> ObservabilityReport {
    let grid: Vec<(usize, f64, f64)> = config
        .theta_grid_deg
        .iter()
        .flat_map(|&t| config.phi_grid_deg.iter().map(move |&p| (t, p)))
        .enumerate()
        .map(|(i, (t, p))| (i, t, p))
        .collect();
    let cells: Vec<ObservabilityCell> = grid
        .par_iter()
        .map(|&(i, t, p)| {
            let gt = CalibrationVector::new(config.mount, t.to_radians(), config.d_bar, config.a_bar, p.to_radians());
            let seed = derive_seed(config.seed, i as u64, 0);
            match hessian_at_truth(&config.scene, &gt, &config.scan, config.root_size, seed) {
                Ok((lmin, lmax, features, points)) => ObservabilityCell {
                    theta_bar_deg: t,
                    phi_bar_deg: p,
                    lambda_min: lmin,
                    lambda_max: lmax,
                    features,
                    points,
                },
                Err(_) => ObservabilityCell {
                    theta_bar_deg: t,
                    phi_bar_deg: p,
                    lambda_min: f64::NAN,
                    lambda_max: f64::NAN,
                    features: 0,
                    points: 0,
                },
            }
        })
        .collect();

    let theta_profile = profile(&cells, &config.theta_grid_deg, |c| c.theta_bar_deg);
    let phi_profile = profile(&cells, &config.phi_grid_deg, |c| c.phi_bar_deg);
    let (tc, tv) = valley(&theta_profile);
    let (pc, pv) = valley(&phi_profile);
    let (axis, contrast, valley_deg) = if pc.total_cmp(&tc).is_ge() { ("phi", pc, pv) } else { ("theta", tc, tv) };
    ObservabilityReport {
        cells,
        summary: ObservabilitySummary { axis: axis.into(), valley_deg, contrast, theta_profile, phi_profile },
    }
}

/// The mounts used for the identifiability study: an omni sensor at
/// (-90 deg, 0.5 m, 0.1 m, 90 deg) and a non-omni one at (0, 0.1 m, 0.5 m, 90 deg).
pub fn identifiability_mounts() -> [(SensorKind, CalibrationVector); 2] {
    [
        (
            SensorKind::Mid360Like,
            CalibrationVector::new(MountKind::SpinningOmni, -90f64.to_radians(), 0.5, 0.1, 90f64.to_radians()),
        ),
        (
            SensorKind::AviaLike,
            CalibrationVector::new(MountKind::SpinningNonOmni, 0.0, 0.1, 0.5, 90f64.to_radians()),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityConfig {
    pub scenes: Vec<SceneSpec>,
    pub mounts: Vec<(SensorModel, CalibrationVector)>,
    /// Added to both angles, radians.
    pub rot_offset: f64,
    /// Added to both translations, metres.
    pub trans_offset: f64,
    pub motor_speed: f64,
    pub revolutions: f64,
    pub seed: u64,
    pub solver: SolverSettings,
}

impl Default for IdentifiabilityConfig {
    /// The six box scenes, both mounts with default sensor noise, and a
    /// 10 degree / 0.1 m offset of the initial guess.
    fn default() -> Self {
        let scenes = (1..=6).map(|i| SceneSpec::builtin(&format!("scene_{i}")).expect("built-in")).collect();
        let mounts = identifiability_mounts()
            .into_iter()
            .map(|(kind, gt)| (SensorModel::for_kind(kind).with_default_noise(), gt))
            .collect();
        Self {
            scenes,
            mounts,
            rot_offset: 10f64.to_radians(),
            trans_offset: 0.1,
            motor_speed: crate::sim::DEFAULT_MOTOR_SPEED,
            revolutions: 2.0,
            seed: 0,
            solver: SolverSettings::default(),
        }
    }
}

/// Per scene and mount: errors and Hessian diagonal for every free parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityRow {
    pub sensor: String,
    pub mount: String,
    pub scene: String,
    pub theta_err_deg: f64,
    pub d_err_mm: f64,
    pub a_err_mm: f64,
    pub phi_err_deg: f64,
    pub theta_diag: f64,
    pub d_diag: f64,
    pub a_diag: f64,
    pub phi_diag: f64,
    pub hessian_min_eig: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: String,
    pub error: String,
}

impl IdentifiabilityRow {
    pub fn translation_diag(&self) -> [f64; 2] {
        [self.d_diag, self.a_diag]
    }

    pub fn translation_err_mm(&self) -> [f64; 2] {
        [self.d_err_mm, self.a_err_mm]
    }
}

/// Calibrates every (mount, scene) pair from a fixed offset initial guess.
/// Degenerate scenes are reported, never raised.
pub fn identifiability_run(config: &IdentifiabilityConfig) -> Vec<IdentifiabilityRow> {
    let jobs: Vec<(usize, &(SensorModel, CalibrationVector), &SceneSpec)> = config
        .mounts
        .iter()
        .flat_map(|m| config.scenes.iter().map(move |s| (m, s)))
        .enumerate()
        .map(|(i, (m, s))| (i, m, s))
        .collect();
    jobs.par_iter()
        .map(|&(i, (sensor, gt), scene)| {
            let initial = CalibrationVector::new(
                gt.kind,
                gt.theta_bar + config.rot_offset,
                gt.d_bar + config.trans_offset,
                gt.a_bar + config.trans_offset,
                gt.phi_bar + config.rot_offset,
            );
            let scan_config = ScanConfig { motor_speed: config.motor_speed, ..ScanConfig::new(*sensor) }
                .with_revolutions(config.revolutions);
            let mut row = IdentifiabilityRow {
                sensor: sensor.kind.to_string(),
                mount: gt.kind.to_string(),
                scene: scene.name.clone(),
                theta_err_deg: f64::NAN,
                d_err_mm: f64::NAN,
                a_err_mm: f64::NAN,
                phi_err_deg: f64::NAN,
                theta_diag: f64::NAN,
                d_diag: f64::NAN,
                a_diag: f64::NAN,
                phi_diag: f64::NAN,
                hessian_min_eig: f64::NAN,
                iterations: 0,
                converged: false,
                termination: String::new(),
                error: String::new(),
            };
            let outcome = generate_scan(scene, gt, &scan_config, derive_seed(config.seed, i as u64, 0))
                .and_then(|scan| PreparedScan::from_scan(&scan))
                .and_then(|prepared| calibrate(&config.solver.problem(prepared, initial, scan_config.d1)));
            match outcome {
                Ok(result) => {
                    let e = result.estimate.error_to(gt);
                    row.theta_err_deg = e[0].abs().to_degrees();
                    row.d_err_mm = e[1].abs() * 1e3;
                    row.a_err_mm = e[2].abs() * 1e3;
                    row.phi_err_deg = e[3].abs().to_degrees();
                    let diag = result.per_parameter_diag;
                    row.theta_diag = diag[0];
                    row.d_diag = diag[1];
                    row.a_diag = diag[2];
                    row.phi_diag = diag[3];
                    row.hessian_min_eig = result.hessian_min_eigenvalue;
                    row.iterations = result.iterations;
                    row.converged = result.converged;
                    row.termination = result.termination.to_string();
                }
                Err(e) => row.error = e.to_string(),
            }
            row
        })
        .collect()
}
