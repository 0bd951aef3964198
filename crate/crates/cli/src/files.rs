//! On-disk artifacts of a stream directory.
//!
//! ```text
//! config.toml      resolved run configuration
//! rig.toml         cameras, matrices row-major
//! arrivals.csv     view,frame,timestamp_s,file   (arrival order)
//! heatmaps/*.dwhm  one per arrival
//! dense/*.dwhm     all-view captures per emitted frame (optional)
//! schedule.csv     view,frame,timestamp_s,cache_hit_count
//! truth_3d.csv     frame,joint,x,y,z
//! truth_2d.csv     frame,view,joint,u,v
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use densewarp::triangulate::Skeleton3D;
use densewarp::CameraView;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    id: usize,
    /// `[width, height]` in pixels.
    image_size: [u32; 2],
    intrinsics: [[f64; 3]; 3],
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    cameras: Vec<CameraEntry>,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn from_rows(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| a[r][c])
}

pub fn rig_to_toml(rig: &[CameraView]) -> String {
    let file = RigFile {
        cameras: rig
            .iter()
            .map(|c| CameraEntry {
                id: c.id,
                image_size: [c.image_size.0, c.image_size.1],
                intrinsics: rows(&c.intrinsics),
                rotation: rows(&c.rotation),
                translation: c.translation.into(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("rig serializes")
}

pub fn read_rig(path: &Path) -> Result<Vec<CameraView>, CliError> {
    let text = read_text(path)?;
    let file: RigFile = toml::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    file.cameras
        .iter()
        .map(|c| {
            CameraView::new(
                c.id,
                from_rows(&c.intrinsics),
                from_rows(&c.rotation),
                Vector3::from(c.translation),
                (c.image_size[0], c.image_size[1]),
            )
            .map_err(|e| CliError::Io(format!("{}: camera {}: {e}", path.display(), c.id)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub view: usize,
    pub frame: u32,
    pub timestamp_s: f64,
    /// Relative to the stream directory.
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth3dRow {
    pub frame: u32,
    pub joint: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth2dRow {
    pub frame: u32,
    pub view: usize,
    pub joint: usize,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkeletonRow {
    pub frame: u32,
    pub joint: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub residual: f64,
}

pub fn skeleton_rows(skeletons: &[Skeleton3D]) -> Vec<SkeletonRow> {
    skeletons
        .iter()
        .flat_map(|s| {
            s.joints
                .iter()
                .zip(&s.per_joint_residual)
                .enumerate()
                .map(|(j, (p, r))| SkeletonRow {
                    frame: s.frame,
                    joint: j,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    residual: *r,
                })
        })
        .collect()
}

pub fn dense_file(view: usize, frame: u32) -> PathBuf {
    PathBuf::from("dense").join(format!("v{view}_f{frame:06}.dwhm"))
}

pub fn arrival_file(view: usize, frame: u32) -> String {
    format!("heatmaps/v{view}_f{frame:06}.dwhm")
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_bytes(path, &bytes)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use densewarp::synth::{build_rig, RigSpec};

    #[test]
    fn rig_round_trips_exactly() {
        let rig = build_rig(&RigSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rig.toml");
        write_bytes(&p, rig_to_toml(&rig).as_bytes()).unwrap();
        assert_eq!(read_rig(&p).unwrap(), rig);
    }
}
