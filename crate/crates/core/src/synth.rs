//! Deterministic synthetic driving scenes with ray-cast depth, simulated
//! lidar beams, and sparse noisy radar.
//!
//! World frame: x right, y down (up is −y), z forward. The ground plane sits
//! at y = 0 and the camera at y = −camera_height. The rendered grayscale
//! image shades each hit's albedo by depth, so intensity edges coincide with
//! depth edges and the colorization densifier has structure to follow.
//!
//! All sampling is driven by per-frame RNG streams derived as
//! `seed ⊕ frame-index ⊕ sensor-salt`, so frames can be generated in any
//! order or in parallel without changing a single byte of output.

use crate::dataset::{
    frame_dir_name, write_intrinsics_json, write_pfm, write_pgm16, write_points_csv,
    write_pose_json, DatasetError,
};
use crate::geometry::{CameraIntrinsics, DenseDepthImage, GrayImage, PointCloud, SE3Pose};
use crate::radar::RadarSweep;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("camera must sit above the ground plane, got height {0}")]
    CameraBelowGround(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Axis-aligned box obstacle. `center`/`size` are world-frame meters; a
/// nonzero `velocity` makes the box drift over time (e.g. a crossing
/// vehicle). `albedo` drives the rendered intensity.
#[derive(Debug, Clone, Copy)]
pub struct BoxObstacle {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub velocity: [f64; 3],
    pub albedo: f64,
}

impl BoxObstacle {
    pub fn still(center: [f64; 3], size: [f64; 3], albedo: f64) -> Self {
        Self {
            center,
            size,
            velocity: [0.0; 3],
            albedo,
        }
    }

    fn min(&self) -> Vector3<f64> {
        Vector3::new(
            self.center[0] - self.size[0] / 2.0,
            self.center[1] - self.size[1] / 2.0,
            self.center[2] - self.size[2] / 2.0,
        )
    }

    fn max(&self) -> Vector3<f64> {
        Vector3::new(
            self.center[0] + self.size[0] / 2.0,
            self.center[1] + self.size[1] / 2.0,
            self.center[2] + self.size[2] / 2.0,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    /// Ground plane height; the plane sits at world y = -ground_height.
    pub ground_height: f64,
    pub camera_height: f64,
    pub boxes: Vec<BoxObstacle>,
    /// Ego speed along +z, m/s.
    pub ego_velocity: f64,
    /// Time between frames, seconds.
    pub frame_interval: f64,
    pub seed: u64,
    /// Maximum rendered depth; sky pixels clamp to this.
    pub far_cap: f64,
    pub ground_albedo: f64,
    pub sky_albedo: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            ground_height: 0.0,
            camera_height: 1.5,
            boxes: Vec::new(),
            ego_velocity: 5.0,
            frame_interval: 0.1,
            seed: 0,
            far_cap: 80.0,
            ground_albedo: 0.35,
            sky_albedo: 0.95,
        }
    }
}

impl SceneConfig {
    /// Scene with box positions advanced to time `t` and velocities kept.
    pub fn at_time(&self, t: f64) -> SceneConfig {
        let mut scene = self.clone();
        for b in &mut scene.boxes {
            for a in 0..3 {
                b.center[a] += b.velocity[a] * t;
            }
        }
        scene
    }

    /// Camera-to-global pose of the given frame: straight-line ego motion
    /// along +z at `ego_velocity`, camera at its mounting height.
    pub fn ego_pose(&self, frame: usize) -> SE3Pose {
        SE3Pose::from_translation(
            0.0,
            -self.camera_height,
            self.ego_velocity * self.frame_interval * frame as f64,
        )
    }
}

#[derive(Debug, Clone)]
pub struct LidarConfig {
    /// Beam elevation angles, radians, positive up.
    pub beam_elevations: Vec<f64>,
    /// Azimuth step, radians; beams sweep the camera's horizontal field.
    pub azimuth_step: f64,
    /// Probability of dropping a returned hit.
    pub dropout: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        // 32 beams from -28° (down) to +4° (up).
        let n = 32;
        let lo = -28.0f64.to_radians();
        let hi = 4.0f64.to_radians();
        Self {
            beam_elevations: (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
            azimuth_step: 0.5f64.to_radians(),
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RadarModelConfig {
    pub points_per_object: usize,
    /// Height of the radar above ground, meters.
    pub mounting_height: f64,
    /// Gaussian range noise, meters.
    pub range_sigma: f64,
    /// Gaussian azimuth noise, radians.
    pub azimuth_sigma: f64,
    /// Expected clutter points per sweep (Poisson rate).
    pub clutter_rate: f64,
    /// Half-angle of the vertical field of view, radians.
    pub vertical_fov: f64,
    /// Half-angle of the horizontal field of view, radians.
    pub azimuth_fov: f64,
}

impl Default for RadarModelConfig {
    fn default() -> Self {
        Self {
            points_per_object: 3,
            mounting_height: 0.5,
            range_sigma: 0.25,
            azimuth_sigma: 0.004,
            clutter_rate: 1.5,
            vertical_fov: 5.0f64.to_radians(),
            azimuth_fov: 40.0f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SensorModelConfig {
    pub lidar: LidarConfig,
    pub radar: RadarModelConfig,
}

/// One radar return: position in the camera frame, planar relative velocity
/// (camera x and z axes), radial range rate, and whether it is clutter.
#[derive(Debug, Clone, Copy)]
pub struct RadarDetection {
    pub point_cam: Vector3<f64>,
    pub velocity_xz: [f64; 2],
    pub range_rate: f64,
    pub clutter: bool,
}

enum Hit {
    Ground,
    Box(usize),
    Sky,
}

/// Nearest intersection along `origin + t·dir` (world frame), `t` in units
/// of `|dir|`. Returns the parameter and what was hit.
fn ray_hit(scene: &SceneConfig, origin: &Vector3<f64>, dir: &Vector3<f64>) -> (f64, Hit) {
    let mut best_t = f64::INFINITY;
    let mut hit = Hit::Sky;

    let ground_y = -scene.ground_height;
    if dir.y.abs() > 1e-12 {
        let t = (ground_y - origin.y) / dir.y;
        if t > 1e-9 && t < best_t {
            best_t = t;
            hit = Hit::Ground;
        }
    }

    for (i, b) in scene.boxes.iter().enumerate() {
        let (bmin, bmax) = (b.min(), b.max());
        let mut t_enter = 1e-9f64;
        let mut t_exit = f64::INFINITY;
        let mut ok = true;
        for a in 0..3 {
            if dir[a].abs() < 1e-12 {
                if origin[a] < bmin[a] || origin[a] > bmax[a] {
                    ok = false;
                    break;
                }
            } else {
                let t0 = (bmin[a] - origin[a]) / dir[a];
                let t1 = (bmax[a] - origin[a]) / dir[a];
                let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                t_enter = t_enter.max(lo);
                t_exit = t_exit.min(hi);
                if t_enter > t_exit {
                    ok = false;
                    break;
                }
            }
        }
        if ok && t_enter < best_t {
            best_t = t_enter;
            hit = Hit::Box(i);
        }
    }
    (best_t, hit)
}

fn cast_pixel(
    scene: &SceneConfig,
    k: &CameraIntrinsics,
    ego_pose: &SE3Pose,
    u: f64,
    v: f64,
) -> (f64, Hit) {
    // Unnormalized camera ray with unit forward component: the ray parameter
    // equals the camera-frame depth of the hit.
    let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    let dir_world = ego_pose.rotation() * dir_cam;
    let origin = *ego_pose.translation();
    let (t, hit) = ray_hit(scene, &origin, &dir_world);
    let depth = t.min(scene.far_cap);
    (depth, if t > scene.far_cap { Hit::Sky } else { hit })
}

/// Per-pixel ray-cast depth; the nearest hit among ground and boxes, sky
/// clamped to the far cap.
pub fn render_depth(
    scene: &SceneConfig,
    k: &CameraIntrinsics,
    ego_pose: &SE3Pose,
) -> Result<DenseDepthImage, SynthError> {
    if -ego_pose.translation().y <= scene.ground_height {
        return Err(SynthError::CameraBelowGround(-ego_pose.translation().y));
    }
    let mut data = vec![0.0; k.width * k.height];
    for v in 0..k.height {
        for u in 0..k.width {
            data[v * k.width + u] = cast_pixel(scene, k, ego_pose, u as f64, v as f64).0;
        }
    }
    Ok(DenseDepthImage::from_data(k.width, k.height, data).expect("depths positive"))
}

fn shade(albedo: f64, depth: f64, far_cap: f64) -> f64 {
    (albedo * (1.0 - 0.5 * (depth / far_cap).clamp(0.0, 1.0))).clamp(0.0, 1.0)
}

/// Grayscale rendering: per-object albedo shaded by depth.
pub fn render_gray(
    scene: &SceneConfig,
    k: &CameraIntrinsics,
    ego_pose: &SE3Pose,
) -> Result<GrayImage, SynthError> {
    if -ego_pose.translation().y <= scene.ground_height {
        return Err(SynthError::CameraBelowGround(-ego_pose.translation().y));
    }
    let mut data = vec![0.0; k.width * k.height];
    for v in 0..k.height {
        for u in 0..k.width {
            let (depth, hit) = cast_pixel(scene, k, ego_pose, u as f64, v as f64);
            let albedo = match hit {
                Hit::Ground => scene.ground_albedo,
                Hit::Box(i) => scene.boxes[i].albedo,
                Hit::Sky => scene.sky_albedo,
            };
            data[v * k.width + u] = shade(albedo, depth, scene.far_cap);
        }
    }
    Ok(GrayImage::from_data(k.width, k.height, data).expect("shade clamps to [0,1]"))
}

/// Casts lidar beams over the camera's horizontal field and returns exact
/// ranges in the camera frame; each hit is dropped with the configured
/// probability.
pub fn sample_lidar(
    scene: &SceneConfig,
    k: &CameraIntrinsics,
    ego_pose: &SE3Pose,
    cfg: &LidarConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud, SynthError> {
    if -ego_pose.translation().y <= scene.ground_height {
        return Err(SynthError::CameraBelowGround(-ego_pose.translation().y));
    }
    let half_fov = (k.cx / k.fx).atan().max(((k.width as f64 - k.cx) / k.fx).atan());
    let steps = (half_fov / cfg.azimuth_step).floor() as i64;
    let origin = *ego_pose.translation();
    let mut points = Vec::new();
    for &elevation in &cfg.beam_elevations {
        for step in -steps..=steps {
            let azimuth = step as f64 * cfg.azimuth_step;
            let dir_cam = Vector3::new(
                azimuth.sin() * elevation.cos(),
                -elevation.sin(),
                azimuth.cos() * elevation.cos(),
            );
            let dir_world = ego_pose.rotation() * dir_cam;
            let (range, hit) = ray_hit(scene, &origin, &dir_world);
            if matches!(hit, Hit::Sky) || range > scene.far_cap {
                continue;
            }
            if cfg.dropout > 0.0 && rng.gen::<f64>() < cfg.dropout {
                continue;
            }
            points.push(dir_cam * range);
        }
    }
    Ok(PointCloud::from_points(points).expect("finite rays"))
}

/// Draws radar returns: surface points near the mounting height on each
/// visible box (range and azimuth perturbed by Gaussian noise, elevation
/// within the vertical field of view exactly), plus Poisson-rate clutter.
pub fn sample_radar_detections(
    scene: &SceneConfig,
    ego_pose: &SE3Pose,
    cfg: &RadarModelConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<RadarDetection> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // The radar sits below the camera on the same mount.
    let cam_height = -ego_pose.translation().y;
    let drop = cam_height - cfg.mounting_height;
    let radar_origin = ego_pose.apply(Vector3::new(0.0, drop, 0.0));
    let rot_t = ego_pose.rotation().transpose();
    let ego_vel_world = Vector3::new(0.0, 0.0, scene.ego_velocity);
    let tan_vfov = cfg.vertical_fov.tan();
    let mut detections = Vec::new();

    for b in &scene.boxes {
        let center_r = rot_t * (Vector3::new(b.center[0], b.center[1], b.center[2]) - radar_origin);
        if center_r.z < 1.0 {
            continue;
        }
        if center_r.x.atan2(center_r.z).abs() > cfg.azimuth_fov {
            continue;
        }
        let (bmin, bmax) = (b.min(), b.max());
        let z_face = bmin.z; // face toward an ego approaching along +z
        if z_face - radar_origin.z < 1.0 {
            continue;
        }
        let v_rel_world =
            Vector3::new(b.velocity[0], b.velocity[1], b.velocity[2]) - ego_vel_world;
        let v_rel = rot_t * v_rel_world;
        for _ in 0..cfg.points_per_object {
            let x_w = rng.gen_range(bmin.x..=bmax.x);
            let horiz =
                ((x_w - radar_origin.x).powi(2) + (z_face - radar_origin.z).powi(2)).sqrt();
            let band = tan_vfov * horiz;
            let y_lo = bmin.y.max(radar_origin.y - band);
            let y_hi = bmax.y.min(radar_origin.y + band);
            if y_lo > y_hi {
                continue; // box entirely outside the vertical field of view
            }
            let y_w = rng.gen_range(y_lo..=y_hi);
            let p_r = rot_t * (Vector3::new(x_w, y_w, z_face) - radar_origin);

            let range = p_r.norm();
            let azimuth = p_r.x.atan2(p_r.z);
            let horiz_r = (p_r.x * p_r.x + p_r.z * p_r.z).sqrt();
            let elevation = (-p_r.y).atan2(horiz_r);
            let noisy_range = (range + cfg.range_sigma * normal.sample(rng)).max(0.1);
            let noisy_azimuth = azimuth + cfg.azimuth_sigma * normal.sample(rng);
            let h = noisy_range * elevation.cos();
            let p_noisy = Vector3::new(
                h * noisy_azimuth.sin(),
                -noisy_range * elevation.sin(),
                h * noisy_azimuth.cos(),
            );
            let radial = p_noisy / p_noisy.norm();
            detections.push(RadarDetection {
                point_cam: p_noisy + Vector3::new(0.0, drop, 0.0),
                velocity_xz: [v_rel.x, v_rel.z],
                range_rate: radial.dot(&v_rel),
                clutter: false,
            });
        }
    }

    // Clutter: Poisson-count ghost returns spread over the frustum, beyond
    // the nominal vertical field of view.
    let clutter_count = poisson_sample(cfg.clutter_rate, rng);
    for _ in 0..clutter_count {
        let azimuth = rng.gen_range(-cfg.azimuth_fov..=cfg.azimuth_fov);
        let elevation = rng.gen_range(-2.0 * cfg.vertical_fov..=2.0 * cfg.vertical_fov);
        let range = rng.gen_range(2.0..scene.far_cap * 0.75);
        let h = range * elevation.cos();
        let p_r = Vector3::new(h * azimuth.sin(), -range * elevation.sin(), h * azimuth.cos());
        let v_rel = rot_t * (-ego_vel_world);
        let radial = p_r / p_r.norm();
        detections.push(RadarDetection {
            point_cam: p_r + Vector3::new(0.0, drop, 0.0),
            velocity_xz: [v_rel.x, v_rel.z],
            range_rate: radial.dot(&v_rel),
            clutter: true,
        });
    }
    detections
}

/// Packages detections as a radar sweep in the camera frame.
pub fn sample_radar(
    scene: &SceneConfig,
    ego_pose: &SE3Pose,
    cfg: &RadarModelConfig,
    rng: &mut ChaCha8Rng,
    timestamp: f64,
) -> RadarSweep {
    let detections = sample_radar_detections(scene, ego_pose, cfg, rng);
    let points: Vec<Vector3<f64>> = detections.iter().map(|d| d.point_cam).collect();
    let range_rate: Vec<f64> = detections.iter().map(|d| d.range_rate).collect();
    RadarSweep {
        cloud: PointCloud::with_attributes(points, Some(range_rate), None)
            .expect("lengths match by construction"),
        sensor_to_global: *ego_pose,
        timestamp,
    }
}

fn poisson_sample(rate: f64, rng: &mut ChaCha8Rng) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let limit = (-rate).exp();
    let mut count = 0usize;
    let mut product = rng.gen::<f64>();
    while product > limit {
        count += 1;
        product *= rng.gen::<f64>();
    }
    count
}

const LIDAR_SALT: u64 = 0x11da_5a17;
const RADAR_SALT: u64 = 0x5ada_5a17;

pub fn frame_rng(seed: u64, frame: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ frame as u64 ^ salt)
}

/// Writes `n_frames` of the dataset format to `out_dir`: grayscale image,
/// lidar and radar clouds, ego pose, intrinsics, and ray-cast dense ground
/// truth. Ego advances by `velocity · interval` per frame. Deterministic:
/// the tree is a pure function of the configs and seed.
pub fn gen_sequence(
    scene: &SceneConfig,
    sensors: &SensorModelConfig,
    k: &CameraIntrinsics,
    n_frames: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(), SynthError> {
    fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    (0..n_frames)
        .into_par_iter()
        .try_for_each(|frame| -> Result<(), SynthError> {
            let t = frame as f64 * scene.frame_interval;
            let scene_t = scene.at_time(t);
            let ego = scene.ego_pose(frame);
            let dir = out_dir.join(frame_dir_name(frame));
            fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
                path: dir.clone(),
                source,
            })?;

            let gt = render_depth(&scene_t, k, &ego)?;
            let gray = render_gray(&scene_t, k, &ego)?;
            let mut lidar_rng = frame_rng(seed, frame, LIDAR_SALT);
            let lidar = sample_lidar(&scene_t, k, &ego, &sensors.lidar, &mut lidar_rng)?;
            let mut radar_rng = frame_rng(seed, frame, RADAR_SALT);
            let detections = sample_radar_detections(&scene_t, &ego, &sensors.radar, &mut radar_rng);
            let radar_points: Vec<Vector3<f64>> =
                detections.iter().map(|d| d.point_cam).collect();
            let radar_vel: Vec<[f64; 2]> = detections.iter().map(|d| d.velocity_xz).collect();
            let radar_cloud = PointCloud::from_points(radar_points).expect("finite");

            write_pgm16(&dir.join("image.pgm"), &gray)?;
            write_pfm(&dir.join("gt_depth.pfm"), gt.width(), gt.height(), gt.data())?;
            write_points_csv(&dir.join("lidar.csv"), &lidar, None)?;
            write_points_csv(&dir.join("radar.csv"), &radar_cloud, Some(&radar_vel))?;
            write_pose_json(&dir.join("pose.json"), &ego)?;
            write_intrinsics_json(&dir.join("intrinsics.json"), k)?;
            Ok(())
        })
}

/// Camera intrinsics of the stock desk-scale scenes: 200×88 with the
/// principal point high in the frame so most rows see the road.
pub fn stock_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(120.0, 120.0, 100.0, 20.0, 200, 88).expect("valid constants")
}

/// The stock scene suite: a straight road with parked boxes on both sides
/// every few meters out to 160 m, and one box crossing the road at 40 m.
pub fn stock_scene(seed: u64) -> SceneConfig {
    let mut boxes = Vec::new();
    let albedos = [0.55, 0.7, 0.85, 0.62, 0.78];
    let mut i = 0usize;
    let mut z = 6.0;
    while z < 160.0 {
        let side = if i % 2 == 0 { -1.0 } else { 1.0 };
        let lateral = side * (3.0 + (i % 3) as f64 * 0.8);
        boxes.push(BoxObstacle::still(
            // Center height 0.9 m: box spans ground to 1.8 m (y in [-1.8, 0]).
            [lateral, -0.9, z],
            [1.8, 1.8, 4.2],
            albedos[i % albedos.len()],
        ));
        i += 1;
        z += 7.0;
    }
    boxes.push(BoxObstacle {
        center: [-8.0, -0.8, 40.0],
        size: [4.2, 1.6, 1.9],
        velocity: [0.8, 0.0, 0.0],
        albedo: 0.9,
    });
    SceneConfig {
        boxes,
        seed,
        ..SceneConfig::default()
    }
}
