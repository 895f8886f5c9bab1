//! File formats: point and encoder CSVs, TOML scene files, run manifests.
//!
//! Points: header `x,y,z,t`. Encoder: header `t,theta` (radians). Scene files
//! hold one `[[planes]]` table per patch:
//!
//! ```toml
//! name = "corner"
//!
//! [[planes]]
//! center = [3.0, 0.0, 0.0]
//! normal = [-1.0, 0.0, 0.0]
//! half_extents = [5.0, 5.0]   # optional, default 5 m x 5 m
//! u_axis = [0.0, 1.0, 0.0]    # optional
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{LaserPoint, ScanFrame, SceneSpec, VirtualPlane};

#[derive(Debug, Serialize, Deserialize)]
struct PointRecord {
    x: f64,
    y: f64,
    z: f64,
    t: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderRecord {
    t: f64,
    theta: f64,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse(format!("{}:{line}: {e}", path.display()))
}

pub fn write_points_csv(path: &Path, points: &[LaserPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for p in points {
        w.serialize(PointRecord { x: p.position.x, y: p.position.y, z: p.position.z, t: p.timestamp })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Vec<LaserPoint>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    check_header(path, &mut r, &["x", "y", "z", "t"])?;
    let mut out = Vec::new();
    for rec in r.deserialize::<PointRecord>() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        out.push(LaserPoint::new(Vector3::new(rec.x, rec.y, rec.z), rec.t));
    }
    Ok(out)
}

pub fn write_encoder_csv(path: &Path, samples: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for &(t, theta) in samples {
        w.serialize(EncoderRecord { t, theta })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_encoder_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    check_header(path, &mut r, &["t", "theta"])?;
    let mut out = Vec::new();
    for rec in r.deserialize::<EncoderRecord>() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        out.push((rec.t, rec.theta));
    }
    Ok(out)
}

fn check_header<R: Read>(path: &Path, r: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Parse(format!(
            "{}:1: expected header '{}', found '{}'",
            path.display(),
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

/// Writes `points.csv` and `encoder.csv` into `dir`.
pub fn write_scan(dir: &Path, scan: &ScanFrame) -> Result<()> {
    write_points_csv(&dir.join("points.csv"), &scan.points)?;
    write_encoder_csv(&dir.join("encoder.csv"), &scan.encoder_samples)
}

pub fn read_scan(points: &Path, encoder: &Path) -> Result<ScanFrame> {
    let points = read_points_csv(points)?;
    let encoder_samples = read_encoder_csv(encoder)?;
    let span = match (points.first(), points.last()) {
        (Some(a), Some(b)) => b.timestamp - a.timestamp,
        _ => 0.0,
    };
    Ok(ScanFrame { points, encoder_samples, frame_span: span })
}

/// Writes serializable flat records with a header row.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    name: Option<String>,
    #[serde(default)]
    planes: Vec<toml::Spanned<PlaneEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaneEntry {
    center: [f64; 3],
    normal: [f64; 3],
    half_extents: Option<[f64; 2]>,
    u_axis: Option<[f64; 3]>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses a TOML scene. Errors name `source` and the offending line.
pub fn parse_scene(text: &str, source: &str) -> Result<SceneSpec> {
    let file: SceneFile = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(1);
        Error::Parse(format!("{source}:{line}: {}", e.message()))
    })?;
    if file.planes.is_empty() {
        return Err(Error::Parse(format!("{source}:1: scene has no [[planes]] entries")));
    }
    let mut planes = Vec::with_capacity(file.planes.len());
    for spanned in &file.planes {
        let line = line_of(text, spanned.span().start);
        let p = spanned.get_ref();
        let half = p.half_extents.unwrap_or([5.0, 5.0]);
        let center = Vector3::from(p.center);
        let normal = Vector3::from(p.normal);
        let half = Vector2::from(half);
        let plane = match p.u_axis {
            Some(u) => VirtualPlane::with_axis(center, normal, half, Vector3::from(u)),
            None => VirtualPlane::new(center, normal, half),
        }
        .map_err(|e| Error::Parse(format!("{source}:{line}: {e}")))?;
        planes.push(plane);
    }
    let name = file.name.unwrap_or_else(|| {
        Path::new(source).file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string()
    });
    SceneSpec::new(name, planes)
}

/// Loads a scene file, or a built-in scene when `spec` names one and no such
/// file exists.
pub fn load_scene(spec: &str) -> Result<SceneSpec> {
    let path = Path::new(spec);
    if !path.exists() && SceneSpec::BUILTIN.contains(&spec) {
        return SceneSpec::builtin(spec);
    }
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    parse_scene(&text, spec)
}

pub fn scene_to_toml(scene: &SceneSpec) -> String {
    let mut s = format!("name = \"{}\"\n", scene.name);
    for p in &scene.planes {
        s.push_str(&format!(
            "\n[[planes]]\ncenter = [{}, {}, {}]\nnormal = [{}, {}, {}]\nhalf_extents = [{}, {}]\nu_axis = [{}, {}, {}]\n",
            p.center.x, p.center.y, p.center.z, p.normal.x, p.normal.y, p.normal.z, p.half_extents.x,
            p.half_extents.y, p.u_axis.x, p.u_axis.y, p.u_axis.z
        ));
    }
    s
}

/// Resolved configuration of a run, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: "spincal".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = create(&dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scan = ScanFrame {
            points: vec![
                LaserPoint::new(Vector3::new(1.0, -2.5, 0.1 + 0.2), 0.0),
                LaserPoint::new(Vector3::new(1e-9, 3.0, -7.25), 0.125),
            ],
            encoder_samples: vec![(0.0, 0.1), (0.005, -3.0)],
            frame_span: 0.125,
        };
        write_scan(dir.path(), &scan).unwrap();
        let back = read_scan(&dir.path().join("points.csv"), &dir.path().join("encoder.csv")).unwrap();
        assert_eq!(back, scan);
        let text = std::fs::read_to_string(dir.path().join("points.csv")).unwrap();
        assert!(text.starts_with("x,y,z,t\n"));
    }

    #[test]
    fn bad_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "a,b,c,d\n1,2,3,4\n").unwrap();
        assert!(matches!(read_points_csv(&p), Err(Error::Parse(_))));
        std::fs::write(&p, "x,y,z,t\n1,2,oops,4\n").unwrap();
        let msg = read_points_csv(&p).unwrap_err().to_string();
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn scene_round_trip() {
        let scene = SceneSpec::builtin("planes40").unwrap();
        let back = parse_scene(&scene_to_toml(&scene), "x.toml").unwrap();
        assert_eq!(back.name, "planes40");
        for (a, b) in scene.planes.iter().zip(&back.planes) {
            assert!((a.center - b.center).amax() < 1e-12);
            assert!((a.u_axis - b.u_axis).amax() < 1e-12);
        }
    }

    #[test]
    fn scene_errors_name_the_line() {
        let text = "name = \"bad\"\n\n[[planes]]\ncenter = [0.0, 0.0, 0.0]\nnormal = [1.0, 0.0, 0.0]\n\n[[planes]]\ncenter = [1.0, 0.0, 0.0]\nnormal = [0.0, 0.0, 0.0]\n";
        let msg = parse_scene(text, "bad.toml").unwrap_err().to_string();
        assert!(msg.contains("bad.toml:7"), "{msg}");

        let text = "[[planes]]\ncenter = [0.0, 0.0]\nnormal = [1.0, 0.0, 0.0]\n";
        let msg = parse_scene(text, "short.toml").unwrap_err().to_string();
        assert!(msg.contains("short.toml:2"), "{msg}");

        assert!(parse_scene("name = \"empty\"\n", "e.toml").is_err());
    }

    #[test]
    fn missing_scene_file_names_the_path() {
        let msg = load_scene("/no/such/scene.toml").unwrap_err().to_string();
        assert!(msg.contains("/no/such/scene.toml"));
        assert_eq!(load_scene("scene_3").unwrap().planes.len(), 4);
    }
}
