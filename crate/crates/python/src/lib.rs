//! Python bindings: scenes, scan simulation, calibration, noise propagation
//! and environment classification. Angles are radians, lengths metres.

use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use spincal::calib::{calibrate as run_calibration, total_cost as cost_at};
use spincal::env::{classify as classify_frame, EnvConfig};
use spincal::experiments::SolverSettings;
use spincal::io::{load_scene, read_scan, write_scan};
use spincal::prelude::{
    generate_scan, lidar_point_covariance, CalibrationVector as CoreVector, MountKind, PreparedScan, ScanConfig,
    ScanFrame as CoreScan, SceneSpec, Schedule, SensorKind, SensorModel,
};
use spincal::uncertainty::NoiseModel;
use spincal::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::InvalidArgument(_) | Error::Parse(_) | Error::UncoveredTimestamp { .. } | Error::EmptyInput(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mount(kind: &str) -> PyResult<MountKind> {
    kind.parse().map_err(to_py)
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

/// The four free mounting parameters `(theta, d, a, phi)` of an omni or
/// non-omni mount.
#[pyclass(module = "spincal_py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct CalibrationVector {
    inner: CoreVector,
}

#[pymethods]
impl CalibrationVector {
    #[new]
    fn new(kind: &str, theta: f64, d: f64, a: f64, phi: f64) -> PyResult<Self> {
        Ok(Self { inner: CoreVector::new(mount(kind)?, theta, d, a, phi) })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta_bar
    }

    #[getter]
    fn d(&self) -> f64 {
        self.inner.d_bar
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a_bar
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi_bar
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64) {
        let v = self.inner.as_array();
        (v[0], v[1], v[2], v[3])
    }

    /// Maps a LiDAR-frame point into the motor frame at spin angle `theta1`.
    #[pyo3(signature = (point, theta1, d1 = 0.0))]
    fn to_motor(&self, point: [f64; 3], theta1: f64, d1: f64) -> [f64; 3] {
        let p = self.inner.to_dh(theta1, d1).transform_to_motor(&Vector3::from(point));
        [p.x, p.y, p.z]
    }

    fn translation_error_mm(&self, truth: &CalibrationVector) -> f64 {
        self.inner.translation_error_mm(&truth.inner)
    }

    fn angle_error_deg(&self, truth: &CalibrationVector) -> f64 {
        self.inner.angle_error_deg(&truth.inner)
    }

    fn __repr__(&self) -> String {
        let x = &self.inner;
        format!(
            "CalibrationVector('{}', theta={}, d={}, a={}, phi={})",
            x.kind, x.theta_bar, x.d_bar, x.a_bar, x.phi_bar
        )
    }
}

/// A set of rectangular planar patches.
#[pyclass(module = "spincal_py", frozen, from_py_object)]
#[derive(Clone)]
struct Scene {
    inner: SceneSpec,
}

#[pymethods]
impl Scene {
    /// `scene_1` .. `scene_6`, `planes40`, or the path of a TOML scene file.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        Ok(Self { inner: load_scene(spec).map_err(to_py)? })
    }

    #[staticmethod]
    fn builtin_names() -> Vec<&'static str> {
        SceneSpec::BUILTIN.to_vec()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn __len__(&self) -> usize {
        self.inner.planes.len()
    }
}

/// Timestamped LiDAR-frame points and the encoder stream.
#[pyclass(module = "spincal_py", frozen, from_py_object)]
#[derive(Clone)]
struct ScanFrame {
    inner: CoreScan,
}

#[pymethods]
impl ScanFrame {
    #[staticmethod]
    fn load(points_csv: PathBuf, encoder_csv: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_scan(&points_csv, &encoder_csv).map_err(to_py)? })
    }

    /// Writes `points.csv` and `encoder.csv` into `directory`.
    fn save(&self, directory: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&directory)?;
        write_scan(&directory, &self.inner).map_err(to_py)
    }

    /// `(x, y, z, t)` per point.
    fn points(&self) -> Vec<(f64, f64, f64, f64)> {
        self.inner.points.iter().map(|p| (p.position.x, p.position.y, p.position.z, p.timestamp)).collect()
    }

    /// `(t, theta)` per encoder sample.
    fn encoder(&self) -> Vec<(f64, f64)> {
        self.inner.encoder_samples.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.points.len()
    }
}

#[pyclass(module = "spincal_py", frozen, get_all)]
struct CalibrationResult {
    estimate: CalibrationVector,
    final_cost: f64,
    iterations: usize,
    converged: bool,
    termination: String,
    hessian: [[f64; 4]; 4],
    hessian_min_eigenvalue: f64,
    degenerate: bool,
    features: usize,
}

#[pymethods]
impl CalibrationResult {
    fn __repr__(&self) -> String {
        format!(
            "CalibrationResult({}, {} after {} rounds, cost={:.3e})",
            self.estimate.__repr__(),
            self.termination,
            self.iterations,
            self.final_cost
        )
    }
}

/// Simulates a spinning scan of `scene` with the mount `gt`.
#[pyfunction]
#[pyo3(signature = (scene, gt, sensor = "mid360", noisy = false, revolutions = 2.0, density = None, d1 = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    scene: &Scene,
    gt: &CalibrationVector,
    sensor: &str,
    noisy: bool,
    revolutions: f64,
    density: Option<f64>,
    d1: f64,
    seed: u64,
) -> PyResult<ScanFrame> {
    let kind: SensorKind = sensor.parse().map_err(to_py)?;
    let mut model = SensorModel::for_kind(kind);
    if noisy {
        model = model.with_default_noise();
    }
    if let Some(pps) = density {
        model = model.with_density(pps);
    }
    let config = ScanConfig { d1, ..ScanConfig::new(model) }.with_revolutions(revolutions);
    let scan = generate_scan(&scene.inner, &gt.inner, &config, seed).map_err(to_py)?;
    Ok(ScanFrame { inner: scan })
}

/// Runs the coarse-to-fine calibration. `schedule` is a list of
/// `(rounds, root_size)` stages.
#[pyfunction]
#[pyo3(signature = (scan, initial, d1 = 0.0, schedule = None, tol = 1e-6, max_iterations = 50))]
fn calibrate(
    py: Python<'_>,
    scan: &ScanFrame,
    initial: &CalibrationVector,
    d1: f64,
    schedule: Option<Vec<(usize, f64)>>,
    tol: f64,
    max_iterations: usize,
) -> PyResult<CalibrationResult> {
    let mut settings = SolverSettings { convergence_tol: tol, max_iterations, ..SolverSettings::default() };
    if let Some(stages) = schedule {
        settings.schedule = Schedule::new(stages).map_err(to_py)?;
    }
    let frame = scan.inner.clone();
    let x0 = initial.inner;
    let result = py
        .detach(move || {
            let prepared = PreparedScan::from_scan(&frame)?;
            run_calibration(&settings.problem(prepared, x0, d1))
        })
        .map_err(to_py)?;
    let h = result.hessian;
    Ok(CalibrationResult {
        estimate: CalibrationVector { inner: result.estimate },
        final_cost: result.final_cost,
        iterations: result.iterations,
        converged: result.converged,
        termination: result.termination.to_string(),
        hessian: std::array::from_fn(|r| std::array::from_fn(|c| h[(r, c)])),
        hessian_min_eigenvalue: result.hessian_min_eigenvalue,
        degenerate: result.degenerate,
        features: result.features,
    })
}

/// Sum of plane thicknesses of the scan mapped through `x`, with features
/// extracted at `root_size`. Returns `(cost, feature_count)`.
#[pyfunction]
#[pyo3(signature = (scan, x, root_size = 0.5, d1 = 0.0))]
fn total_cost(scan: &ScanFrame, x: &CalibrationVector, root_size: f64, d1: f64) -> PyResult<(f64, usize)> {
    let prepared = PreparedScan::from_scan(&scan.inner).map_err(to_py)?;
    let voxel = spincal::plane::VoxelizationConfig::default().with_root_size(root_size);
    let (cost, features) = cost_at(&prepared, &x.inner, d1, &voxel).map_err(to_py)?;
    Ok((cost, features.len()))
}

/// LiDAR-frame covariance of a point at `depth` along unit bearing `omega`.
#[pyfunction]
fn point_covariance(depth: f64, omega: [f64; 3], sigma_depth: f64, sigma_bearing: f64) -> PyResult<[[f64; 3]; 3]> {
    let noise = NoiseModel::new(sigma_depth, sigma_bearing, 0.0).map_err(to_py)?;
    let c = lidar_point_covariance(depth, &Vector3::from(omega), &noise).map_err(to_py)?;
    Ok(rows(&c.matrix))
}

#[pyfunction]
fn spatial_scale(points: Vec<[f64; 3]>) -> PyResult<f64> {
    let pts: Vec<Vector3<f64>> = points.into_iter().map(Vector3::from).collect();
    spincal::env::spatial_scale(&pts).map_err(to_py)
}

/// Classifies a frame against its history. Returns
/// `(kind, scale, downsample_rate, map_index)`.
#[pyfunction]
#[pyo3(signature = (frame, history = Vec::new(), s1 = 8.0, s2 = 20.0))]
fn classify(frame: Vec<[f64; 3]>, history: Vec<Vec<[f64; 3]>>, s1: f64, s2: f64) -> PyResult<(String, f64, f64, usize)> {
    let frame: Vec<Vector3<f64>> = frame.into_iter().map(Vector3::from).collect();
    let history: Vec<Vec<Vector3<f64>>> =
        history.into_iter().map(|h| h.into_iter().map(Vector3::from).collect()).collect();
    let config = EnvConfig { s1, s2, ..EnvConfig::default() };
    let c = classify_frame(&frame, &history, &config).map_err(to_py)?;
    Ok((c.class.kind.to_string(), c.scale, c.class.selected_rate, c.class.selected_map_index))
}

#[pyfunction]
fn max_acceleration_bound(epsilon_p: f64, t_scan: f64) -> PyResult<f64> {
    spincal::env::max_acceleration_bound(epsilon_p, t_scan).map_err(to_py)
}

#[pymodule]
fn spincal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CalibrationVector>()?;
    m.add_class::<Scene>()?;
    m.add_class::<ScanFrame>()?;
    m.add_class::<CalibrationResult>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(total_cost, m)?)?;
    m.add_function(wrap_pyfunction!(point_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_scale, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(max_acceleration_bound, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
