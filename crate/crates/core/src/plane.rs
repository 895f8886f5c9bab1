//! Plane statistics and adaptive (octree) voxelization of a point cloud.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::NeumaierSum;

/// Integer voxel coordinates `floor(p / size)` per axis.
pub fn voxel_key(position: &Vector3<f64>, size: f64) -> [i64; 3] {
    [
        (position.x / size).floor() as i64,
        (position.y / size).floor() as i64,
        (position.z / size).floor() as i64,
    ]
}

/// Centroid, population covariance and ascending eigen-decomposition of a
/// point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneStats {
    pub count: usize,
    pub centroid: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    /// `[lambda_min, lambda_mid, lambda_max]`
    pub eigenvalues: [f64; 3],
    /// Unit eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: Matrix3<f64>,
}

impl PlaneStats {
    pub fn from_points<'a, I>(points: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Vector3<f64>>,
        I::IntoIter: Clone,
    {
        let iter = points.into_iter();
        let mut sx = NeumaierSum::new();
        let mut sy = NeumaierSum::new();
        let mut sz = NeumaierSum::new();
        let mut n = 0usize;
        for p in iter.clone() {
            sx += p.x;
            sy += p.y;
            sz += p.z;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyInput("plane_stats needs at least one point"));
        }
        let inv_n = 1.0 / n as f64;
        let centroid = Vector3::new(sx.value(), sy.value(), sz.value()) * inv_n;

        // xx xy xz yy yz zz
        let mut acc = [NeumaierSum::new(); 6];
        for p in iter {
            let d = p - centroid;
            acc[0] += d.x * d.x;
            acc[1] += d.x * d.y;
            acc[2] += d.x * d.z;
            acc[3] += d.y * d.y;
            acc[4] += d.y * d.z;
            acc[5] += d.z * d.z;
        }
        let c: Vec<f64> = acc.iter().map(|s| s.value() * inv_n).collect();
        let covariance = Matrix3::new(c[0], c[1], c[2], c[1], c[3], c[4], c[2], c[4], c[5]);
        Ok(Self::from_moments(n, centroid, covariance))
    }

    pub fn from_moments(count: usize, centroid: Vector3<f64>, covariance: Matrix3<f64>) -> Self {
        let eig = SymmetricEigen::new(covariance);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.map(|i| eig.eigenvalues[i]);
        let eigenvectors = Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
        Self { count, centroid, covariance, eigenvalues, eigenvectors }
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.eigenvectors.column(0).into_owned()
    }

    /// `lambda_mid - lambda_min`
    pub fn eigengap(&self) -> f64 {
        self.eigenvalues[1] - self.eigenvalues[0]
    }
}

/// [`PlaneStats`] of a non-empty point slice.
pub fn plane_stats(points: &[Vector3<f64>]) -> Result<PlaneStats> {
    PlaneStats::from_points(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelizationConfig {
    /// Edge length of the root voxels, metres.
    pub root_size: f64,
    /// Number of octree levels including the root.
    pub max_layers: usize,
    /// A voxel is planar when `lambda_min / lambda_mid` is below this. At
    /// 0.01 a badly misaligned start admits so few features that the solver
    /// can settle on a smeared cloud with a lower summed cost; 0.03 keeps
    /// enough of the scene in play.
    pub planarity_ratio: f64,
    pub min_points: usize,
}

impl Default for VoxelizationConfig {
    fn default() -> Self {
        Self { root_size: 1.0, max_layers: 2, planarity_ratio: 0.03, min_points: 10 }
    }
}

impl VoxelizationConfig {
    pub fn with_root_size(self, root_size: f64) -> Self {
        Self { root_size, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.root_size > 0.0 && self.root_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("root_size must be positive, got {}", self.root_size)));
        }
        if self.max_layers < 1 {
            return Err(Error::InvalidArgument("max_layers must be at least 1".into()));
        }
        if !(self.planarity_ratio > 0.0 && self.planarity_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "planarity_ratio must lie in (0, 1), got {}",
                self.planarity_ratio
            )));
        }
        if self.min_points < 4 {
            return Err(Error::InvalidArgument("min_points must be at least 4".into()));
        }
        Ok(())
    }

    fn is_planar(&self, stats: &PlaneStats) -> bool {
        // NaN (zero lambda_mid with zero lambda_min) fails the comparison.
        stats.count >= self.min_points
            && stats.eigenvalues[0] / stats.eigenvalues[1] < self.planarity_ratio
    }
}

/// A planar patch found by voxelization.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFeature {
    /// Indices into the voxelized cloud.
    pub point_indices: Vec<usize>,
    /// Lower corner of the voxel that produced the feature.
    pub voxel_origin: Vector3<f64>,
    pub voxel_size: f64,
    /// 0 for a root voxel, 1 for its children, ...
    pub layer: usize,
    pub stats: PlaneStats,
}

impl PlaneFeature {
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|k| {
            p[k] >= self.voxel_origin[k] - tol && p[k] <= self.voxel_origin[k] + self.voxel_size + tol
        })
    }
}

/// Splits the cloud into root voxels and fits planes, recursing into octree
/// children where a voxel is not planar.
///
/// A voxel that passes the planarity test emits one feature and is not
/// subdivided further. Output is ordered by root voxel key, then octant.
pub fn adaptive_voxelize(cloud: &[Vector3<f64>], config: &VoxelizationConfig) -> Vec<PlaneFeature> {
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in cloud.iter().enumerate() {
        buckets.entry(voxel_key(p, config.root_size)).or_default().push(i);
    }
    let mut roots: Vec<([i64; 3], Vec<usize>)> = buckets.into_iter().collect();
    roots.sort_unstable_by_key(|(k, _)| *k);

    roots
        .into_par_iter()
        .map(|(key, indices)| {
            let origin = Vector3::new(key[0] as f64, key[1] as f64, key[2] as f64) * config.root_size;
            let mut out = Vec::new();
            fit_voxel(cloud, indices, origin, config.root_size, 0, config, &mut out);
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn fit_voxel(
    cloud: &[Vector3<f64>],
    indices: Vec<usize>,
    origin: Vector3<f64>,
    size: f64,
    layer: usize,
    config: &VoxelizationConfig,
    out: &mut Vec<PlaneFeature>,
) {
    if indices.len() < config.min_points {
        return;
    }
    let stats = PlaneStats::from_points(indices.iter().map(|&i| &cloud[i]))
        .expect("voxel holds at least min_points points");
    if config.is_planar(&stats) {
        out.push(PlaneFeature { point_indices: indices, voxel_origin: origin, voxel_size: size, layer, stats });
        return;
    }
    if layer + 1 >= config.max_layers {
        return;
    }
    let half = 0.5 * size;
    let mid = origin + Vector3::repeat(half);
    let mut children: [Vec<usize>; 8] = Default::default();
    for i in indices {
        let p = &cloud[i];
        let octant = (p.x >= mid.x) as usize | ((p.y >= mid.y) as usize) << 1 | ((p.z >= mid.z) as usize) << 2;
        children[octant].push(i);
    }
    for (octant, child) in children.into_iter().enumerate() {
        let offset = Vector3::new((octant & 1) as f64, ((octant >> 1) & 1) as f64, ((octant >> 2) & 1) as f64);
        fit_voxel(cloud, child, origin + offset * half, half, layer + 1, config, out);
    }
}
