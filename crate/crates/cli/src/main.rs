//! `spincal` command-line tool.
//!
//! Exit codes: 0 success, 2 input error, 3 empty output, 4 non-convergence,
//! 5 degenerate feature set. Angles are radians unless the flag ends in `-deg`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use spincal::calib::DEGENERACY_RATIO;
use spincal::experiments::{
    angle_grid_deg, identifiability_mounts, identifiability_run, monte_carlo, observability_sweep,
    IdentifiabilityConfig, MonteCarloConfig, ObservabilityConfig, SolverSettings,
};
use spincal::io::{load_scene, read_points_csv, read_scan, write_records, write_scan, Manifest};
use spincal::prelude::*;
use spincal::uncertainty::NoiseModel;

const EXIT_INPUT: u8 = 2;
const EXIT_EMPTY: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_DEGENERATE: u8 = 5;

#[derive(Parser)]
#[command(name = "spincal", version, about = "Targetless LiDAR-motor calibration for spinning actuated LiDARs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a spinning scan of a scene
    Simulate(SimulateArgs),
    /// Calibrate from a points CSV and an encoder CSV
    Calibrate(CalibrateArgs),
    /// Repeated calibrations from random ground truths and initial guesses
    Montecarlo(MonteCarloArgs),
    /// Hessian eigenvalues at the ground truth over a grid of mounting angles
    Observability(ObservabilityArgs),
    /// Calibrate both reference mounts in the six box scenes
    Identifiability(IdentifiabilityArgs),
    /// Classify frames as narrow, normal or wide
    EnvClassify(EnvArgs),
    /// Acceleration upper bound 2 eps / T^2
    AccelBound(AccelArgs),
}

#[derive(Args)]
struct SensorArgs {
    /// mid360 or avia
    #[arg(long, default_value = "mid360")]
    sensor: String,
    /// Override the sensor's point rate (points/s)
    #[arg(long)]
    density: Option<f64>,
    /// Use the default range, bearing and encoder noise
    #[arg(long)]
    noisy: bool,
    #[arg(long, requires = "noisy")]
    sigma_depth: Option<f64>,
    #[arg(long, requires = "noisy")]
    sigma_bearing: Option<f64>,
    #[arg(long, requires = "noisy")]
    sigma_encoder: Option<f64>,
    /// Motor speed, rad/s
    #[arg(long, default_value_t = spincal::sim::DEFAULT_MOTOR_SPEED, allow_negative_numbers = true)]
    motor_speed: f64,
    /// Scan duration in seconds (default: two revolutions)
    #[arg(long, conflicts_with = "revolutions")]
    duration: Option<f64>,
    #[arg(long)]
    revolutions: Option<f64>,
}

impl SensorArgs {
    fn kind(&self) -> Result<SensorKind, CliError> {
        self.sensor.parse().map_err(CliError::from)
    }

    fn scan_config(&self, d1: f64) -> Result<ScanConfig, CliError> {
        let mut sensor = SensorModel::for_kind(self.kind()?);
        if let Some(pps) = self.density {
            sensor = sensor.with_density(pps);
        }
        if self.noisy {
            let n = SensorModel::DEFAULT_NOISE;
            sensor = sensor.with_noise(NoiseModel::new(
                self.sigma_depth.unwrap_or(n.sigma_depth),
                self.sigma_bearing.unwrap_or(n.sigma_bearing),
                self.sigma_encoder.unwrap_or(n.sigma_encoder),
            )?);
        }
        let mut config = ScanConfig { motor_speed: self.motor_speed, d1, ..ScanConfig::new(sensor) };
        config = config.with_revolutions(self.revolutions.unwrap_or(2.0));
        if let Some(duration) = self.duration {
            config.duration = duration;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Ground-truth mount for `simulate`; unset values come from the reference
/// mount of the sensor kind.
#[derive(Args)]
struct GtArgs {
    /// omni or non-omni (default: follows the sensor)
    #[arg(long)]
    mount: Option<String>,
    #[arg(long, allow_negative_numbers = true, conflicts_with = "theta_deg")]
    theta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta_deg: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    d: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, allow_negative_numbers = true, conflicts_with = "phi_deg")]
    phi: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    phi_deg: Option<f64>,
}

#[derive(Args)]
struct InitArgs {
    /// omni or non-omni
    #[arg(long)]
    mount: String,
    #[arg(long, allow_negative_numbers = true, required_unless_present = "init_theta_deg")]
    init_theta: Option<f64>,
    #[arg(long, allow_negative_numbers = true, conflicts_with = "init_theta")]
    init_theta_deg: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    init_d: f64,
    #[arg(long, allow_negative_numbers = true)]
    init_a: f64,
    #[arg(long, allow_negative_numbers = true, required_unless_present = "init_phi_deg")]
    init_phi: Option<f64>,
    #[arg(long, allow_negative_numbers = true, conflicts_with = "init_phi")]
    init_phi_deg: Option<f64>,
}

fn angle(rad: Option<f64>, deg: Option<f64>) -> Option<f64> {
    rad.or(deg.map(f64::to_radians))
}

#[derive(Args)]
struct SolverArgs {
    /// Root voxel sizes per round as `rounds x size` stages, e.g. `2x1.0,2x0.5,1x0.25`
    #[arg(long, default_value = "2x1.0,2x0.5,1x0.25")]
    schedule: String,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
}

impl SolverArgs {
    fn settings(&self) -> Result<SolverSettings, CliError> {
        let stages = self
            .schedule
            .split(',')
            .map(|stage| {
                let (n, size) = stage
                    .trim()
                    .split_once('x')
                    .ok_or_else(|| CliError::input(format!("bad schedule stage `{stage}`, expected ROUNDSxSIZE")))?;
                let n: usize = n.trim().parse().map_err(|_| CliError::input(format!("bad round count in `{stage}`")))?;
                let size: f64 = size.trim().parse().map_err(|_| CliError::input(format!("bad root size in `{stage}`")))?;
                Ok((n, size))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        if !(self.tol > 0.0) || self.max_iterations == 0 {
            return Err(CliError::input("tol and max-iterations must be positive"));
        }
        Ok(SolverSettings {
            schedule: Schedule::new(stages)?,
            convergence_tol: self.tol,
            max_iterations: self.max_iterations,
            ..SolverSettings::default()
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene file (TOML) or built-in name: scene_1..scene_6, planes40
    #[arg(long, default_value = "scene_1")]
    scene: String,
    #[command(flatten)]
    sensor: SensorArgs,
    #[command(flatten)]
    gt: GtArgs,
    /// Fixed motor-joint offset d1, metres
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    d1: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    #[command(flatten)]
    init: InitArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    d1: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Use the exact second-derivative model instead of Gauss-Newton
    #[arg(long)]
    exact_hessian: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MonteCarloArgs {
    #[arg(long, default_value = "planes40")]
    scene: String,
    /// omni or non-omni (default: follows the sensor)
    #[arg(long)]
    mount: Option<String>,
    #[command(flatten)]
    sensor: SensorArgs,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Initial-guess angle perturbation, degrees (1 sigma)
    #[arg(long, default_value_t = 5.0)]
    rot_sigma_deg: f64,
    /// Initial-guess translation perturbation, metres (1 sigma)
    #[arg(long, default_value_t = 0.05)]
    trans_sigma: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ObservabilityArgs {
    #[arg(long, default_value = "planes40")]
    scene: String,
    #[arg(long)]
    mount: Option<String>,
    #[command(flatten)]
    sensor: SensorArgs,
    /// Grid step for both angles, degrees
    #[arg(long, default_value_t = 10.0)]
    step_deg: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    d: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 0.5)]
    root_size: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifiabilityArgs {
    /// Disable sensor noise
    #[arg(long)]
    noise_free: bool,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    rot_offset_deg: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    trans_offset: f64,
    #[arg(long, default_value_t = 2.0)]
    revolutions: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnvArgs {
    /// Point CSVs (`x,y,z,t`) in time order; each is classified against the
    /// frames before it
    #[arg(long = "frame", required = true)]
    frames: Vec<PathBuf>,
    #[arg(long, default_value_t = 8.0)]
    s1: f64,
    #[arg(long, default_value_t = 20.0)]
    s2: f64,
    #[arg(long, default_value_t = 5.0)]
    eval_voxel: f64,
    #[arg(long, default_value_t = 8)]
    history: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AccelArgs {
    /// Allowed in-scan position drift, metres
    #[arg(long)]
    epsilon: f64,
    /// Scan period, seconds
    #[arg(long)]
    t_scan: f64,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptyScan | Error::EmptyInput(_) => EXIT_EMPTY,
            Error::NoFeatures { .. } | Error::AllFeaturesDegenerate { .. } => EXIT_DEGENERATE,
            _ => EXIT_INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input(e.to_string())
    }
}

type CliResult<T = u8> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", e.message);
        return ExitCode::from(e.code);
    }
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Montecarlo(a) => montecarlo(a),
        Command::Observability(a) => observability(a),
        Command::Identifiability(a) => identifiability(a),
        Command::EnvClassify(a) => env_classify(a),
        Command::AccelBound(a) => accel_bound(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// `SPINCAL_THREADS` caps the worker pool; 0 or unset means automatic.
fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("SPINCAL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::input(format!("SPINCAL_THREADS must be a non-negative integer, got `{value}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    Ok(())
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn finish(dir: &Path, mut manifest: Manifest, outputs: &[&str]) -> CliResult<()> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.write(dir)?;
    Ok(())
}

fn resolve_mount(flag: &Option<String>, sensor: SensorKind) -> CliResult<MountKind> {
    match flag {
        Some(m) => Ok(m.parse()?),
        None => Ok(sensor.default_mount()),
    }
}

fn simulate(args: SimulateArgs) -> CliResult {
    let scene = load_scene(&args.scene)?;
    let kind = args.sensor.kind()?;
    let config = args.sensor.scan_config(args.d1)?;
    let mount = resolve_mount(&args.gt.mount, kind)?;
    let reference = identifiability_mounts()
        .into_iter()
        .map(|(_, gt)| gt)
        .find(|gt| gt.kind == mount)
        .expect("one reference mount per kind");
    let g = &args.gt;
    let gt = CalibrationVector::new(
        mount,
        angle(g.theta, g.theta_deg).unwrap_or(reference.theta_bar),
        g.d.unwrap_or(reference.d_bar),
        g.a.unwrap_or(reference.a_bar),
        angle(g.phi, g.phi_deg).unwrap_or(reference.phi_bar),
    );
    prepare_out(&args.out)?;
    let scan = generate_scan(&scene, &gt, &config, args.seed)?;
    write_scan(&args.out, &scan)?;
    let manifest = Manifest::new(
        "simulate",
        Some(args.seed),
        json!({ "scene": scene, "scene_source": args.scene, "ground_truth": gt, "scan": config }),
    );
    finish(&args.out, manifest, &["points.csv", "encoder.csv"])?;
    println!("{} points", scan.points.len());
    Ok(0)
}

#[derive(Serialize)]
struct ResultRecord {
    mount: MountKind,
    initial: CalibrationVector,
    estimate: CalibrationVector,
    final_cost: f64,
    iterations: usize,
    converged: bool,
    termination: Termination,
    hessian: [[f64; 4]; 4],
    hessian_min_eigenvalue: f64,
    hessian_max_eigenvalue: f64,
    /// Minimum eigenvalues below this are flagged.
    degeneracy_threshold: f64,
    degeneracy_warning: bool,
    per_parameter_diag: [f64; 4],
    features: usize,
    skipped_features: usize,
    points: usize,
}

fn calibrate_cmd(args: CalibrateArgs) -> CliResult {
    let mount: MountKind = args.init.mount.parse()?;
    let i = &args.init;
    let initial = CalibrationVector::new(
        mount,
        angle(i.init_theta, i.init_theta_deg).ok_or_else(|| CliError::input("missing initial theta"))?,
        i.init_d,
        i.init_a,
        angle(i.init_phi, i.init_phi_deg).ok_or_else(|| CliError::input("missing initial phi"))?,
    );
    let settings = args.solver.settings()?;
    let scan = read_scan(&args.points, &args.encoder)?;
    if scan.points.is_empty() {
        return Err(CliError::input(format!("{}: no points", args.points.display())));
    }
    let prepared = PreparedScan::from_scan(&scan)?;
    let mut problem = settings.problem(prepared, initial, args.d1);
    if args.exact_hessian {
        problem.hessian_mode = HessianMode::Exact;
    }
    prepare_out(&args.out)?;
    let result = calibrate(&problem)?;

    let eig = nalgebra::SymmetricEigen::new(result.hessian).eigenvalues;
    let max_eig = eig.max();
    let h = result.hessian;
    let record = ResultRecord {
        mount,
        initial,
        estimate: result.estimate,
        final_cost: result.final_cost,
        iterations: result.iterations,
        converged: result.converged,
        termination: result.termination,
        hessian: std::array::from_fn(|r| std::array::from_fn(|c| h[(r, c)])),
        hessian_min_eigenvalue: result.hessian_min_eigenvalue,
        hessian_max_eigenvalue: max_eig,
        degeneracy_threshold: DEGENERACY_RATIO * max_eig,
        degeneracy_warning: result.degenerate,
        per_parameter_diag: result.per_parameter_diag.into(),
        features: result.features,
        skipped_features: result.skipped_features,
        points: scan.points.len(),
    };
    write_json(&args.out.join("result.json"), &record)?;
    write_records(&args.out.join("trace.csv"), &result.trace)?;
    let manifest = Manifest::new(
        "calibrate",
        None,
        json!({
            "points": args.points,
            "encoder": args.encoder,
            "initial": initial,
            "d1": args.d1,
            "solver": settings,
            "hessian_mode": problem.hessian_mode,
        }),
    );
    finish(&args.out, manifest, &["result.json", "trace.csv"])?;

    if result.degenerate {
        eprintln!(
            "warning: Hessian minimum eigenvalue {:.3e} is below {:.3e}; some parameters are unobservable",
            result.hessian_min_eigenvalue, record.degeneracy_threshold
        );
    }
    println!("{} after {} rounds", result.termination, result.iterations);
    Ok(match result.termination {
        Termination::Converged => 0,
        Termination::MaxIterations => EXIT_NOT_CONVERGED,
        Termination::NoFeatures | Termination::DegenerateFeatures => EXIT_DEGENERATE,
    })
}

fn montecarlo(args: MonteCarloArgs) -> CliResult {
    let scene = load_scene(&args.scene)?;
    let kind = args.sensor.kind()?;
    let mount = resolve_mount(&args.mount, kind)?;
    let scan = args.sensor.scan_config(0.0)?;
    if args.trials == 0 {
        return Err(CliError::input("trials must be at least 1"));
    }
    let config = MonteCarloConfig {
        rot_sigma: args.rot_sigma_deg.to_radians(),
        trans_sigma: args.trans_sigma,
        solver: args.solver.settings()?,
        ..MonteCarloConfig::new(scene, mount, scan, args.trials, args.seed)
    };
    prepare_out(&args.out)?;
    let report = monte_carlo(&config);
    write_records(&args.out.join("trials.csv"), &report.rows)?;
    write_json(&args.out.join("summary.json"), &report.summary)?;
    finish(&args.out, Manifest::new("montecarlo", Some(args.seed), serde_json::to_value(&config)?), &[
        "trials.csv",
        "summary.json",
    ])?;
    let s = report.summary;
    println!(
        "{}/{} converged, translation max {:.4} mm, angle max {:.5} deg",
        s.converged, s.trials, s.trans_max_mm, s.angle_max_deg
    );
    Ok(0)
}

fn observability(args: ObservabilityArgs) -> CliResult {
    let scene = load_scene(&args.scene)?;
    let kind = args.sensor.kind()?;
    let mount = resolve_mount(&args.mount, kind)?;
    let scan = args.sensor.scan_config(0.0)?;
    if !(args.step_deg > 0.0 && args.step_deg <= 180.0) {
        return Err(CliError::input("step-deg must be in (0, 180]"));
    }
    let config = ObservabilityConfig {
        theta_grid_deg: angle_grid_deg(args.step_deg),
        phi_grid_deg: angle_grid_deg(args.step_deg),
        d_bar: args.d,
        a_bar: args.a,
        root_size: args.root_size,
        ..ObservabilityConfig::new(scene, mount, scan, args.seed)
    };
    prepare_out(&args.out)?;
    let report = observability_sweep(&config);
    write_records(&args.out.join("observability.csv"), &report.cells)?;
    write_json(&args.out.join("summary.json"), &report.summary)?;
    finish(&args.out, Manifest::new("observability", Some(args.seed), serde_json::to_value(&config)?), &[
        "observability.csv",
        "summary.json",
    ])?;
    let s = &report.summary;
    println!("valley on {} at {:?} deg, contrast {:.3e}", s.axis, s.valley_deg, s.contrast);
    Ok(0)
}

fn identifiability(args: IdentifiabilityArgs) -> CliResult {
    let mut config = IdentifiabilityConfig {
        rot_offset: args.rot_offset_deg.to_radians(),
        trans_offset: args.trans_offset,
        revolutions: args.revolutions,
        seed: args.seed,
        solver: args.solver.settings()?,
        ..IdentifiabilityConfig::default()
    };
    if !(args.revolutions > 0.0) {
        return Err(CliError::input("revolutions must be positive"));
    }
    if args.noise_free {
        for (sensor, _) in &mut config.mounts {
            sensor.noise = NoiseModel::zero();
        }
    }
    prepare_out(&args.out)?;
    let rows = identifiability_run(&config);
    write_records(&args.out.join("identifiability.csv"), &rows)?;
    finish(&args.out, Manifest::new("identifiability", Some(args.seed), serde_json::to_value(&config)?), &[
        "identifiability.csv",
    ])?;
    for r in &rows {
        println!(
            "{:<8} {:<8} d {:>10.3} mm  a {:>10.3} mm  diag(d) {:.3e}  diag(a) {:.3e}",
            r.mount, r.scene, r.d_err_mm, r.a_err_mm, r.d_diag, r.a_diag
        );
    }
    Ok(0)
}

fn env_classify(args: EnvArgs) -> CliResult {
    let config = EnvConfig { s1: args.s1, s2: args.s2, eval_voxel: args.eval_voxel, history_frames: args.history, ..EnvConfig::default() };
    config.validate()?;
    let frames = args
        .frames
        .iter()
        .map(|p| Ok(read_points_csv(p)?.into_iter().map(|lp| lp.position).collect::<Vec<_>>()))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some((i, _)) = frames.iter().enumerate().find(|(_, f)| f.is_empty()) {
        return Err(CliError::input(format!("{}: no points", args.frames[i].display())));
    }
    prepare_out(&args.out)?;
    let mut records = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let c = classify(frame, &frames[..i], &config)?;
        println!("frame {i}: s = {:.3} m, {}", c.scale, c.class.kind);
        records.push(c.record(i));
    }
    write_records(&args.out.join("env.csv"), &records)?;
    finish(&args.out, Manifest::new("env-classify", None, json!({ "frames": args.frames, "config": config })), &[
        "env.csv",
    ])?;
    Ok(0)
}

fn accel_bound(args: AccelArgs) -> CliResult {
    let bound = max_acceleration_bound(args.epsilon, args.t_scan)?;
    println!("{bound:?}");
    Ok(0)
}
