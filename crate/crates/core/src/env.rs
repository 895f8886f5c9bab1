//! Environment classification by spatial scale, and the acceleration bound.

use std::collections::HashMap;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::voxel_key;
use crate::sum::NeumaierSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Frame downsample rates for narrow, normal and wide scenes, metres.
    pub downsample_rates: [f64; 3],
    /// Root voxel sizes of the three maps, metres.
    pub map_root_sizes: [f64; 3],
    /// Voxel size for downsampling the panoramic map before measuring scale.
    pub eval_voxel: f64,
    /// Below this scale a scene is narrow, metres.
    pub s1: f64,
    /// Above this scale a scene is wide, metres.
    pub s2: f64,
    pub history_frames: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            downsample_rates: [0.15, 0.2, 0.25],
            map_root_sizes: [0.25, 0.5, 1.0],
            eval_voxel: 5.0,
            s1: 8.0,
            s2: 20.0,
            history_frames: 8,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let [v1, v2, v3] = self.downsample_rates;
        if !(0.0 < v1 && v1 < v2 && v2 < v3) {
            return Err(Error::InvalidArgument("downsample rates must satisfy 0 < V1 < V2 < V3".into()));
        }
        if !self.map_root_sizes.iter().all(|&s| s > 0.0) {
            return Err(Error::InvalidArgument("map root sizes must be positive".into()));
        }
        if !(0.0 < self.s1 && self.s1 < self.s2) {
            return Err(Error::InvalidArgument("scale thresholds must satisfy 0 < s1 < s2".into()));
        }
        if !(self.eval_voxel > 0.0) {
            return Err(Error::InvalidArgument("eval_voxel must be positive".into()));
        }
        Ok(())
    }

    /// Class for a measured scale. Both thresholds are strict.
    pub fn class_for_scale(&self, s: f64) -> EnvClass {
        let kind = if s > self.s2 {
            EnvKind::Wide
        } else if s < self.s1 {
            EnvKind::Narrow
        } else {
            EnvKind::Normal
        };
        let idx = kind.index();
        EnvClass { kind, selected_rate: self.downsample_rates[idx], selected_map_index: idx + 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Narrow,
    Normal,
    Wide,
}

impl EnvKind {
    fn index(self) -> usize {
        match self {
            EnvKind::Narrow => 0,
            EnvKind::Normal => 1,
            EnvKind::Wide => 2,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EnvKind::Narrow => "narrow",
            EnvKind::Normal => "normal",
            EnvKind::Wide => "wide",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvClass {
    pub kind: EnvKind,
    pub selected_rate: f64,
    /// 1-based
    pub selected_map_index: usize,
}

/// Voxel-centroid downsampling; output ordered by voxel key.
pub fn grid_downsample(points: &[Vector3<f64>], size: f64) -> Vec<Vector3<f64>> {
    assert!(size > 0.0, "voxel size must be positive");
    let mut cells: HashMap<[i64; 3], (Vector3<f64>, usize)> = HashMap::new();
    for p in points {
        let e = cells.entry(voxel_key(p, size)).or_insert((Vector3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    cells.into_iter().map(|(_, (sum, n))| sum / n as f64).collect()
}

/// Mean distance of the points to their centroid, metres.
pub fn spatial_scale(points: &[Vector3<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("spatial_scale needs at least one point"));
    }
    let n = points.len() as f64;
    let mut c = [NeumaierSum::new(); 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let q = Vector3::new(c[0].value(), c[1].value(), c[2].value()) / n;
    Ok(points.iter().map(|p| (p - q).norm()).collect::<NeumaierSum>().value() / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class: EnvClass,
    pub scale: f64,
    pub point_count: usize,
    pub panoramic_count: usize,
    /// The frame downsampled at the selected rate.
    pub frame: Vec<Vector3<f64>>,
}

/// One classified frame in the fixed CSV layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub frame_id: usize,
    pub point_count: usize,
    pub panoramic_count: usize,
    pub s: f64,
    pub class: EnvKind,
    pub v_s: f64,
    pub map_index: usize,
}

impl Classification {
    pub fn record(&self, frame_id: usize) -> EnvRecord {
        EnvRecord {
            frame_id,
            point_count: self.point_count,
            panoramic_count: self.panoramic_count,
            s: self.scale,
            class: self.class.kind,
            v_s: self.class.selected_rate,
            map_index: self.class.selected_map_index,
        }
    }
}

/// Merges the frame with the newest `history_frames` history frames,
/// measures the spatial scale of the merged map after downsampling it at
/// `eval_voxel`, and downsamples the frame at the rate chosen for that scale.
pub fn classify(frame: &[Vector3<f64>], history: &[Vec<Vector3<f64>>], config: &EnvConfig) -> Result<Classification> {
    config.validate()?;
    if frame.is_empty() {
        return Err(Error::EmptyInput("classify needs a non-empty frame"));
    }
    let recent = &history[history.len().saturating_sub(config.history_frames)..];
    let mut map: Vec<Vector3<f64>> = Vec::with_capacity(frame.len() + recent.iter().map(Vec::len).sum::<usize>());
    map.extend_from_slice(frame);
    for h in recent {
        map.extend_from_slice(h);
    }
    let panoramic = grid_downsample(&map, config.eval_voxel);
    let scale = spatial_scale(&panoramic)?;
    let class = config.class_for_scale(scale);
    Ok(Classification {
        class,
        scale,
        point_count: frame.len(),
        panoramic_count: map.len(),
        frame: grid_downsample(frame, class.selected_rate),
    })
}

/// Upper bound `2 eps / T^2` on acceleration, m/s^2.
pub fn max_acceleration_bound(epsilon_p: f64, t_scan: f64) -> Result<f64> {
    if !(epsilon_p > 0.0 && t_scan > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon_p and t_scan must be positive, got {epsilon_p} and {t_scan}"
        )));
    }
    // dividing twice keeps (0.1, 0.1) at exactly 20
    Ok(2.0 * epsilon_p / t_scan / t_scan)
}
