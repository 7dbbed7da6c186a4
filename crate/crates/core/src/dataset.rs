//! On-disk dataset format.
//!
//! One directory per frame, `frame_NNNNNN/`, containing:
//!
//! * `image.pgm` — binary PGM (P5), 16-bit big-endian, maxval 65535
//! * `gt_depth.pfm` — PFM grayscale, little-endian (scale -1.0), meters,
//!   rows bottom-to-top per the PFM convention
//! * `lidar.csv`, `radar.csv` — header `x,y,z` plus optional `vx,vy`,
//!   decimal floats, camera/sensor frame
//! * `pose.json` — `rotation` as row-major 9 floats plus `translation`,
//!   sensor to global
//! * `intrinsics.json` — `fx,fy,cx,cy,width,height`
//! * `mer.csv` (optional) — header `u,v,depth,pda`
//!
//! [`DatasetReader`] records every file it opens, which lets tests prove the
//! supervision trainer never touches lidar during training.

use crate::geometry::{CameraIntrinsics, DenseDepthImage, GrayImage, PointCloud, SE3Pose};
use crate::radar::{MERMap, RadarSweep};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("frame index {index} out of range ({count} frames)")]
    FrameOutOfRange { index: usize, count: usize },
    #[error("no frame directories under {0}")]
    EmptyDataset(PathBuf),
    #[error("invalid data in {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn frame_dir_name(index: usize) -> String {
    format!("frame_{index:06}")
}

// --- PGM (P5, 16-bit big-endian) ---

pub fn write_pgm16(path: &Path, gray: &GrayImage) -> Result<(), DatasetError> {
    let mut buf = Vec::with_capacity(20 + gray.data().len() * 2);
    write!(buf, "P5\n{} {}\n65535\n", gray.width(), gray.height()).unwrap();
    for &v in gray.data() {
        let q = (v * 65535.0 + 0.5).floor().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_pgm16(path: &Path) -> Result<GrayImage, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (header_fields, data_start) = parse_pnm_header(&bytes, path)?;
    let [width, height, maxval] = header_fields;
    if maxval != 65535 {
        return Err(parse_err(path, format!("expected maxval 65535, got {maxval}")));
    }
    let expected = width * height * 2;
    let data = &bytes[data_start..];
    if data.len() < expected {
        return Err(parse_err(path, "truncated pixel data"));
    }
    let values: Vec<f64> = data[..expected]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    GrayImage::from_data(width, height, values)
        .map_err(|e| parse_err(path, e.to_string()))
}

/// Parses "P5", three decimal fields, and returns the pixel-data offset.
/// Comments (`#` to end of line) are allowed between tokens.
fn parse_pnm_header(bytes: &[u8], path: &Path) -> Result<([usize; 3], usize), DatasetError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(path, "not a binary PGM (P5) file"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, "malformed PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| parse_err(path, "bad header integer"))?;
    }
    // Single whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err(path, "missing header terminator"));
    }
    Ok((fields, pos + 1))
}

// --- PFM (grayscale, little-endian, rows bottom-to-top) ---

pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<(), DatasetError> {
    assert_eq!(data.len(), width * height);
    let mut buf = Vec::with_capacity(32 + data.len() * 4);
    write!(buf, "Pf\n{width} {height}\n-1.0\n").unwrap();
    for row in (0..height).rev() {
        for col in 0..width {
            buf.extend_from_slice(&(data[row * width + col] as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>), DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String, DatasetError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let kind = next_token(&bytes)?;
    if kind != "Pf" {
        return Err(parse_err(path, format!("expected grayscale PFM, got `{kind}`")));
    }
    let width: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| parse_err(path, "bad width"))?;
    let height: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| parse_err(path, "bad height"))?;
    let scale: f64 = next_token(&bytes)?
        .parse()
        .map_err(|_| parse_err(path, "bad scale"))?;
    let data_start = pos + 1;
    let expected = width * height * 4;
    if bytes.len() < data_start + expected {
        return Err(parse_err(path, "truncated PFM data"));
    }
    let raw = &bytes[data_start..data_start + expected];
    let little_endian = scale < 0.0;
    let mut out = vec![0.0f64; width * height];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = if little_endian {
            f32::from_le_bytes(chunk.try_into().unwrap())
        } else {
            f32::from_be_bytes(chunk.try_into().unwrap())
        };
        let row = height - 1 - i / width;
        let col = i % width;
        out[row * width + col] = v as f64;
    }
    Ok((width, height, out))
}

// --- CSV point clouds ---

/// Writes `x,y,z` rows, appending `vx,vy` columns when provided.
pub fn write_points_csv(
    path: &Path,
    cloud: &PointCloud,
    velocities: Option<&[[f64; 2]]>,
) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let with_vel = velocities.is_some();
    if with_vel {
        wtr.write_record(["x", "y", "z", "vx", "vy"])
    } else {
        wtr.write_record(["x", "y", "z"])
    }
    .map_err(|e| parse_err(path, e.to_string()))?;
    for (i, p) in cloud.points.iter().enumerate() {
        if let Some(vel) = velocities {
            wtr.write_record([
                p.x.to_string(),
                p.y.to_string(),
                p.z.to_string(),
                vel[i][0].to_string(),
                vel[i][1].to_string(),
            ])
        } else {
            wtr.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string()])
        }
        .map_err(|e| parse_err(path, e.to_string()))?;
    }
    wtr.flush().map_err(io_err(path))
}

/// Reads a point cloud; when `vx,vy` columns are present the radial
/// range-rate is derived from them and attached as a point attribute.
pub fn read_points_csv(path: &Path) -> Result<PointCloud, DatasetError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(path, "missing x,y,z columns")),
    };
    let vel_cols = match (col("vx"), col("vy")) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    let mut points = Vec::new();
    let mut range_rate = vel_cols.map(|_| Vec::new());
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let get = |idx: usize| -> Result<f64, DatasetError> {
            record
                .get(idx)
                .ok_or_else(|| parse_err(path, "short row"))?
                .trim()
                .parse()
                .map_err(|_| parse_err(path, "bad float"))
        };
        let p = Vector3::new(get(ix)?, get(iy)?, get(iz)?);
        if let (Some((cvx, cvy)), Some(rr)) = (vel_cols, range_rate.as_mut()) {
            let (vx, vy) = (get(cvx)?, get(cvy)?);
            // vx is lateral (camera x), vy forward (camera z); project the
            // planar velocity onto the radial direction in the ground plane.
            let horiz = (p.x * p.x + p.z * p.z).sqrt();
            rr.push(if horiz > 0.0 {
                (p.x * vx + p.z * vy) / horiz
            } else {
                0.0
            });
        }
        points.push(p);
    }
    PointCloud::with_attributes(points, range_rate, None)
        .map_err(|e| DatasetError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

// --- MER csv ---

pub fn write_mer_csv(path: &Path, mer: &MERMap) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    wtr.write_record(["u", "v", "depth", "pda"])
        .map_err(|e| parse_err(path, e.to_string()))?;
    for v in 0..mer.height() {
        for u in 0..mer.width() {
            for &(depth, pda) in mer.entries(u, v) {
                wtr.write_record([
                    u.to_string(),
                    v.to_string(),
                    depth.to_string(),
                    pda.to_string(),
                ])
                .map_err(|e| parse_err(path, e.to_string()))?;
            }
        }
    }
    wtr.flush().map_err(io_err(path))
}

pub fn read_mer_csv(path: &Path, width: usize, height: usize) -> Result<MERMap, DatasetError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut mer = MERMap::new(width, height);
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let field = |i: usize| -> Result<&str, DatasetError> {
            record.get(i).ok_or_else(|| parse_err(path, "short row"))
        };
        let u: usize = field(0)?.trim().parse().map_err(|_| parse_err(path, "bad u"))?;
        let v: usize = field(1)?.trim().parse().map_err(|_| parse_err(path, "bad v"))?;
        let depth: f64 = field(2)?.trim().parse().map_err(|_| parse_err(path, "bad depth"))?;
        let pda: f64 = field(3)?.trim().parse().map_err(|_| parse_err(path, "bad pda"))?;
        if u >= width || v >= height {
            return Err(DatasetError::Invalid {
                path: path.to_path_buf(),
                message: format!("pixel ({u},{v}) outside {width}x{height}"),
            });
        }
        mer.push(u, v, depth, pda).map_err(|e| DatasetError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    Ok(mer)
}

// --- JSON records ---

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
}

pub fn write_pose_json(path: &Path, pose: &SE3Pose) -> Result<(), DatasetError> {
    let r = pose.rotation();
    let record = PoseRecord {
        rotation: [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ],
        translation: [
            pose.translation()[0],
            pose.translation()[1],
            pose.translation()[2],
        ],
    };
    let json = serde_json::to_string_pretty(&record).expect("plain struct");
    fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn read_pose_json(path: &Path) -> Result<SE3Pose, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let record: PoseRecord =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    let r = record.rotation;
    let rotation = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
    let translation = Vector3::new(
        record.translation[0],
        record.translation[1],
        record.translation[2],
    );
    SE3Pose::new(rotation, translation).map_err(|e| DatasetError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_intrinsics_json(path: &Path, k: &CameraIntrinsics) -> Result<(), DatasetError> {
    let json = serde_json::to_string_pretty(k).expect("plain struct");
    fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn read_intrinsics_json(path: &Path) -> Result<CameraIntrinsics, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let k: CameraIntrinsics =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height).map_err(|e| {
        DatasetError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })
}

// --- Frame-oriented reader ---

/// Reads dataset frames and records every file it opens.
pub struct DatasetReader {
    root: PathBuf,
    frames: Vec<PathBuf>,
    log: Mutex<Vec<PathBuf>>,
}

impl DatasetReader {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        let entries = fs::read_dir(&root).map_err(io_err(&root))?;
        let mut frames: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("frame_"))
            })
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(DatasetError::EmptyDataset(root));
        }
        Ok(Self {
            root,
            frames,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn frame_path(&self, index: usize, file: &str) -> Result<PathBuf, DatasetError> {
        let dir = self
            .frames
            .get(index)
            .ok_or(DatasetError::FrameOutOfRange {
                index,
                count: self.frames.len(),
            })?;
        let path = dir.join(file);
        self.log.lock().unwrap().push(path.clone());
        Ok(path)
    }

    pub fn gray(&self, index: usize) -> Result<GrayImage, DatasetError> {
        read_pgm16(&self.frame_path(index, "image.pgm")?)
    }

    pub fn intrinsics(&self, index: usize) -> Result<CameraIntrinsics, DatasetError> {
        read_intrinsics_json(&self.frame_path(index, "intrinsics.json")?)
    }

    pub fn pose(&self, index: usize) -> Result<SE3Pose, DatasetError> {
        read_pose_json(&self.frame_path(index, "pose.json")?)
    }

    pub fn lidar(&self, index: usize) -> Result<PointCloud, DatasetError> {
        read_points_csv(&self.frame_path(index, "lidar.csv")?)
    }

    /// Radar cloud with its pose; the timestamp is the frame index in frame
    /// units (capture times are not persisted in the dataset format).
    pub fn radar_sweep(&self, index: usize) -> Result<RadarSweep, DatasetError> {
        let cloud = read_points_csv(&self.frame_path(index, "radar.csv")?)?;
        let pose = self.pose(index)?;
        Ok(RadarSweep {
            cloud,
            sensor_to_global: pose,
            timestamp: index as f64,
        })
    }

    pub fn gt_depth(&self, index: usize) -> Result<DenseDepthImage, DatasetError> {
        let path = self.frame_path(index, "gt_depth.pfm")?;
        let (w, h, data) = read_pfm(&path)?;
        DenseDepthImage::from_data(w, h, data).map_err(|e| DatasetError::Invalid {
            path,
            message: e.to_string(),
        })
    }

    /// The optional precomputed MER map, sized from the frame intrinsics.
    pub fn mer(&self, index: usize) -> Result<Option<MERMap>, DatasetError> {
        let k = self.intrinsics(index)?;
        let path = self.frame_path(index, "mer.csv")?;
        if !path.exists() {
            return Ok(None);
        }
        read_mer_csv(&path, k.width, k.height).map(Some)
    }

    /// Every path handed out so far, sorted.
    pub fn access_log(&self) -> Vec<PathBuf> {
        let mut log = self.log.lock().unwrap().clone();
        log.sort();
        log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pgm_roundtrip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        // Values on the 1/65535 grid survive the round trip exactly.
        let data: Vec<f64> = (0..12).map(|i| (i * 5000) as f64 / 65535.0).collect();
        let gray = GrayImage::from_data(4, 3, data).unwrap();
        write_pgm16(&path, &gray).unwrap();
        let back = read_pgm16(&path).unwrap();
        assert_eq!(gray, back);
        // Header is the fixed P5 form.
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n65535\n"));
    }

    #[test]
    fn pgm_accepts_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# comment line\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&1000u16.to_be_bytes());
        bytes.extend_from_slice(&65535u16.to_be_bytes());
        fs::write(&path, bytes).unwrap();
        let img = read_pgm16(&path).unwrap();
        assert_eq!(img.get(1, 0), 1.0);
    }

    #[test]
    fn pfm_roundtrip_and_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let data: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        write_pfm(&path, 3, 2, &data).unwrap();
        let (w, h, back) = read_pfm(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, data);
        // Bottom row is stored first.
        let bytes = fs::read(&path).unwrap();
        let header_len = b"Pf\n3 2\n-1.0\n".len();
        let first = f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap());
        assert_eq!(first, 4.0);
    }

    #[test]
    fn points_csv_roundtrip_with_velocities() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("radar.csv");
        let cloud = PointCloud::from_points(vec![
            Vector3::new(3.0, -0.5, 4.0),
            Vector3::new(0.0, 0.0, 10.0),
        ])
        .unwrap();
        let vel = vec![[0.0, -5.0], [0.0, -5.0]];
        write_points_csv(&path, &cloud, Some(&vel)).unwrap();
        let back = read_points_csv(&path).unwrap();
        assert_eq!(back.points, cloud.points);
        let rr = back.range_rate.unwrap();
        // First point: radial dir (0.6, 0.8) in the xz plane, v = (0,-5).
        assert!((rr[0] - (-4.0)).abs() < 1e-12);
        assert!((rr[1] - (-5.0)).abs() < 1e-12);
    }

    #[test]
    fn points_csv_without_velocity_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lidar.csv");
        fs::write(&path, "x,y,z\n1.5,-0.25,7\n").unwrap();
        let cloud = read_points_csv(&path).unwrap();
        assert_eq!(cloud.points, vec![Vector3::new(1.5, -0.25, 7.0)]);
        assert!(cloud.range_rate.is_none());
    }

    #[test]
    fn pose_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.json");
        let pose = SE3Pose::rot_z(0.3).compose(&SE3Pose::from_translation(1.0, -1.5, 42.0));
        write_pose_json(&path, &pose).unwrap();
        let back = read_pose_json(&path).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(pose.rotation()[(i, j)], back.rotation()[(i, j)]);
            }
            assert_eq!(pose.translation()[i], back.translation()[i]);
        }
    }

    #[test]
    fn pose_json_rejects_bad_rotation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.json");
        fs::write(
            &path,
            r#"{"rotation":[1,0,0,0,1,0.5,0,0,1],"translation":[0,0,0]}"#,
        )
        .unwrap();
        assert!(read_pose_json(&path).is_err());
    }

    #[test]
    fn intrinsics_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("intrinsics.json");
        let k = CameraIntrinsics::new(120.0, 120.0, 100.0, 20.0, 200, 88).unwrap();
        write_intrinsics_json(&path, &k).unwrap();
        assert_eq!(read_intrinsics_json(&path).unwrap(), k);
    }

    #[test]
    fn mer_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mer.csv");
        let mut mer = MERMap::new(4, 2);
        mer.push(1, 0, 10.0, 0.9).unwrap();
        mer.push(1, 0, 12.5, 0.55).unwrap();
        mer.push(3, 1, 30.0, 0.7).unwrap();
        write_mer_csv(&path, &mer).unwrap();
        let back = read_mer_csv(&path, 4, 2).unwrap();
        assert_eq!(back.entries(1, 0), mer.entries(1, 0));
        assert_eq!(back.entries(3, 1), mer.entries(3, 1));
        assert!(back.entries(0, 0).is_empty());
    }

    #[test]
    fn reader_scans_frames_and_logs_access() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let frame = dir.path().join(frame_dir_name(i));
            fs::create_dir(&frame).unwrap();
            let k = CameraIntrinsics::new(50.0, 50.0, 8.0, 4.0, 16, 8).unwrap();
            write_intrinsics_json(&frame.join("intrinsics.json"), &k).unwrap();
            write_pose_json(&frame.join("pose.json"), &SE3Pose::identity()).unwrap();
        }
        let reader = DatasetReader::open(dir.path()).unwrap();
        assert_eq!(reader.len(), 3);
        reader.intrinsics(1).unwrap();
        reader.pose(2).unwrap();
        let log = reader.access_log();
        assert_eq!(log.len(), 2);
        assert!(log.iter().any(|p| p.ends_with("frame_000001/intrinsics.json")));
        assert!(log.iter().any(|p| p.ends_with("frame_000002/pose.json")));
        assert!(reader.gray(5).is_err());
    }

    #[test]
    fn reader_rejects_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            DatasetReader::open(dir.path()),
            Err(DatasetError::EmptyDataset(_))
        ));
    }

    #[test]
    fn csv_float_formatting_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let points: Vec<Vector3<f64>> = (0..100)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(0.1..80.0),
                )
            })
            .collect();
        let cloud = PointCloud::from_points(points).unwrap();
        write_points_csv(&path, &cloud, None).unwrap();
        let back = read_points_csv(&path).unwrap();
        // Shortest round-trip decimal formatting preserves every bit.
        assert_eq!(back.points, cloud.points);
    }
}
