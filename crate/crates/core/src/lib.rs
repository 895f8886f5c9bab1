//! Targetless LiDAR-motor extrinsic calibration for spinning actuated LiDARs.
//!
//! The LiDAR-to-motor transform is parameterized with two Denavit-Hartenberg
//! joints. Four of the eight parameters are free and are recovered by
//! minimizing the thickness (smallest covariance eigenvalue) of planar patches
//! extracted from the motor-frame point cloud by adaptive voxelization.
//!
//! # Modules
//!
//! - [`dh`] - DH parameterization, rigid transforms and point Jacobians
//! - [`plane`] - plane statistics and adaptive voxelization
//! - [`calib`] - plane-thickness cost, derivatives and the Levenberg-Marquardt solver
//! - [`uncertainty`] - range/bearing/encoder noise model and covariance propagation
//! - [`env`] - spatial-scale environment classification and the acceleration bound
//! - [`sim`] - virtual-plane scenes, ray casting and spinning scan generation
//! - [`experiments`] - Monte-Carlo, observability and identifiability harnesses
//! - [`io`] - CSV, scene file and manifest formats
//!
//! # Example
//!
//! ```no_run
//! use spincal::prelude::*;
//!
//! let scene = SceneSpec::builtin("scene_1").unwrap();
//! let gt = CalibrationVector::new(MountKind::SpinningOmni, -1.2, 0.05, 0.08, 1.4);
//! let config = ScanConfig::new(SensorModel::mid360_like());
//! let scan = generate_scan(&scene, &gt, &config, 7).unwrap();
//!
//! let initial = perturb_initial(&gt, 5f64.to_radians(), 0.05, 11);
//! let problem = CalibrationProblem::new(&scan, initial, config.d1).unwrap();
//! let result = calibrate(&problem).unwrap();
//! println!("{:?} after {} rounds", result.estimate, result.iterations);
//! ```

pub mod angles;
pub mod calib;
pub mod dh;
pub mod env;
pub mod error;
pub mod experiments;
pub mod io;
pub mod plane;
pub mod sim;
pub mod sum;
pub mod uncertainty;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::angles::normalize_angle;
    pub use crate::calib::{
        calibrate, cost_gradient_hessian, total_cost, CalibrationProblem, CalibrationResult,
        HessianMode, PreparedScan, Schedule, Termination, TraceRecord,
    };
    pub use crate::dh::{
        point_jacobian_wrt_calib, rot_x, rot_z, transform_to_motor, CalibrationVector,
        DhParameterSet, MountKind, RigidTransform,
    };
    pub use crate::env::{
        classify, grid_downsample, max_acceleration_bound, spatial_scale, EnvClass, EnvConfig,
        EnvKind,
    };
    pub use crate::error::{Error, Result};
    pub use crate::plane::{
        adaptive_voxelize, plane_stats, voxel_key, PlaneFeature, PlaneStats, VoxelizationConfig,
    };
    pub use crate::sim::{
        generate_scan, perturb_initial, ray_cast, sample_ground_truth, LaserPoint, ScanConfig,
        ScanFrame, SceneSpec, SensorKind, SensorModel, VirtualPlane,
    };
    pub use crate::uncertainty::{
        interpolate_encoder, lidar_point_covariance, propagate_to_motor, propagate_to_world,
        tangent_basis, Frame, NoiseModel, PointCovariance, PoseWithCovariance,
    };
}
