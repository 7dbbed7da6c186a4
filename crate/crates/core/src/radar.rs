//! Radar input variants: multi-sweep accumulation, height extension, and
//! MER confidence thresholding.
//!
//! Height extension replaces each point with a vertical band of samples in
//! world coordinates before projection, mitigating radar's limited vertical
//! field of view. The world-up axis is −y (see the geometry module); a world
//! height `h` above the ground plane is the coordinate `y = -h`. Extension
//! preserves each point's horizontal position; preserving slant range instead
//! would shift samples along the ray and is not implemented.

use crate::geometry::{GeometryError, PointCloud, SE3Pose, SparseDepthImage};
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadarError {
    #[error("no sweeps to accumulate")]
    NoSweeps,
    #[error("invalid height band: requires h_min < h_max and step > 0, got [{h_min}, {h_max}] step {step}")]
    InvalidHeightBand { h_min: f64, h_max: f64, step: f64 },
    #[error("pda threshold {0} outside [0, 1]")]
    InvalidPdaThreshold(f64),
    #[error("MER entry invalid: depth {depth}, pda {pda}")]
    InvalidMerEntry { depth: f64, pda: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One radar scan with its pose and capture time.
#[derive(Debug, Clone)]
pub struct RadarSweep {
    pub cloud: PointCloud,
    pub sensor_to_global: SE3Pose,
    pub timestamp: f64,
}

/// Default height band of the extension, meters above ground.
pub const HEIGHT_EXTEND_MIN: f64 = 0.25;
pub const HEIGHT_EXTEND_MAX: f64 = 2.0;
/// Default vertical sample spacing; fine enough that projected columns stay
/// gap-free out to 80 m with focal lengths around 500 px.
pub const HEIGHT_EXTEND_STEP: f64 = 0.05;

/// Default confidence threshold applied to MER entries.
pub const DEFAULT_PDA_MIN: f64 = 0.5;

/// Multi-channel enhanced radar: per-pixel `(depth, confidence)` entries.
#[derive(Debug, Clone, Default)]
pub struct MERMap {
    width: usize,
    height: usize,
    entries: Vec<Vec<(f64, f64)>>,
}

impl MERMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            entries: vec![Vec::new(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn push(&mut self, u: usize, v: usize, depth: f64, pda: f64) -> Result<(), RadarError> {
        if !(depth > 0.0 && depth.is_finite() && (0.0..=1.0).contains(&pda)) {
            return Err(RadarError::InvalidMerEntry { depth, pda });
        }
        self.entries[v * self.width + u].push((depth, pda));
        Ok(())
    }

    pub fn entries(&self, u: usize, v: usize) -> &[(f64, f64)] {
        &self.entries[v * self.width + u]
    }
}

/// Maps every sweep into the reference camera frame via
/// `reference_cam_from_global ∘ sensor_to_global` and concatenates, keeping
/// sweep order then point order.
pub fn accumulate_sweeps(
    sweeps: &[RadarSweep],
    reference_cam_from_global: &SE3Pose,
) -> Result<PointCloud, RadarError> {
    if sweeps.is_empty() {
        return Err(RadarError::NoSweeps);
    }
    let mut points = Vec::new();
    let mut range_rate: Option<Vec<f64>> = None;
    let mut intensity: Option<Vec<f64>> = None;
    let all_rr = sweeps.iter().all(|s| s.cloud.range_rate.is_some());
    let all_it = sweeps.iter().all(|s| s.cloud.intensity.is_some());
    for sweep in sweeps {
        let to_ref = reference_cam_from_global.compose(&sweep.sensor_to_global);
        for &p in &sweep.cloud.points {
            points.push(to_ref.apply(p));
        }
        if all_rr {
            range_rate
                .get_or_insert_with(Vec::new)
                .extend_from_slice(sweep.cloud.range_rate.as_ref().unwrap());
        }
        if all_it {
            intensity
                .get_or_insert_with(Vec::new)
                .extend_from_slice(sweep.cloud.intensity.as_ref().unwrap());
        }
    }
    Ok(PointCloud::with_attributes(points, range_rate, intensity)?)
}

/// Replaces each world-frame point with vertical samples spanning heights
/// `h_min, h_min+step, …` up to `h_max`; horizontal position is preserved.
/// Output size is `n_points × n_steps`, source-point order then height order.
pub fn height_extend(
    cloud_world: &PointCloud,
    h_min: f64,
    h_max: f64,
    step: f64,
) -> Result<PointCloud, RadarError> {
    if !(h_min < h_max && step > 0.0) {
        return Err(RadarError::InvalidHeightBand { h_min, h_max, step });
    }
    let n_steps = ((h_max - h_min) / step).floor() as usize + 1;
    let mut points = Vec::with_capacity(cloud_world.len() * n_steps);
    let mut range_rate = cloud_world
        .range_rate
        .as_ref()
        .map(|_| Vec::with_capacity(cloud_world.len() * n_steps));
    let mut intensity = cloud_world
        .intensity
        .as_ref()
        .map(|_| Vec::with_capacity(cloud_world.len() * n_steps));
    for (i, p) in cloud_world.points.iter().enumerate() {
        for k in 0..n_steps {
            let h = h_min + k as f64 * step;
            // World up is -y: height h above ground sits at y = -h.
            points.push(Vector3::new(p.x, -h, p.z));
            if let Some(rr) = &mut range_rate {
                rr.push(cloud_world.range_rate.as_ref().unwrap()[i]);
            }
            if let Some(it) = &mut intensity {
                it.push(cloud_world.intensity.as_ref().unwrap()[i]);
            }
        }
    }
    Ok(PointCloud::with_attributes(points, range_rate, intensity)?)
}

/// Collapses a MER map to a sparse depth image: each pixel takes the depth of
/// its highest-confidence entry among entries with `pda >= pda_min`; ties go
/// to the smaller depth.
pub fn mer_threshold(mer: &MERMap, pda_min: f64) -> Result<SparseDepthImage, RadarError> {
    if !(0.0..=1.0).contains(&pda_min) {
        return Err(RadarError::InvalidPdaThreshold(pda_min));
    }
    let mut out = SparseDepthImage::empty(mer.width, mer.height);
    for v in 0..mer.height {
        for u in 0..mer.width {
            let mut best: Option<(f64, f64)> = None; // (pda, depth)
            for &(depth, pda) in mer.entries(u, v) {
                if pda < pda_min {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bp, bd)) => pda > bp || (pda == bp && depth < bd),
                };
                if better {
                    best = Some((pda, depth));
                }
            }
            if let Some((_, depth)) = best {
                out.set(u, v, depth);
            }
        }
    }
    Ok(out)
}
