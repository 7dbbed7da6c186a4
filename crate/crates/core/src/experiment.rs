//! Experiment runners for the two protocols, plus offline evaluation,
//! depth-image emission, and reproducibility manifests.
//!
//! The inference experiment trains a model whose only input is a radar
//! variant, supervised by colorization-densified lidar. The supervision
//! experiment trains on the grayscale image with a radar variant as the only
//! supervision signal (a densified-lidar control arm stands in for the lidar
//! baseline); sparse lidar is used exclusively for evaluation.
//!
//! Every run writes `report.json`, `checkpoint.bin`, prediction images, and
//! a `manifest.json` carrying the spec plus content hashes of the inputs;
//! re-running from the manifest reproduces reports and checkpoints
//! byte-for-byte.

use crate::dataset::{frame_dir_name, read_pfm, write_pfm, write_pgm16, DatasetError, DatasetReader};
use crate::densify::{densify_depth, DensifyError};
use crate::geometry::{
    project_to_depth, transform_points, DenseDepthImage, GeometryError, GrayImage, SE3Pose,
    SparseDepthImage,
};
use crate::losses::LossError;
use crate::metrics::{evaluate, MetricsAccumulator, MetricsError, MetricsReport};
use crate::model::{
    fit, load_checkpoint, save_checkpoint, HeadKind, ModelConfig, ModelError, ModelOutput,
    Tensor3, TinyDepth, TrainConfig, TrainSample, TrainTarget,
};
use crate::radar::{accumulate_sweeps, height_extend, mer_threshold, RadarError};
use crate::sid::{encode_map, probs_to_labels, SIDConfig, SidError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Radar and image inputs are divided by this before entering the network.
pub const INPUT_DEPTH_SCALE: f64 = 80.0;
/// Depth ceiling of emitted visualization images.
pub const VIS_MAX_DEPTH: f64 = 80.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("frame {frame} has no mer.csv but the MER variant was requested")]
    MissingMer { frame: usize },
    #[error("prediction file missing or malformed for frame {frame}: {path}")]
    BadPrediction { frame: usize, path: PathBuf },
    #[error("dataset content hash mismatch at {path}; the manifest was recorded against different inputs")]
    HashMismatch { path: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Radar(#[from] RadarError),
    #[error(transparent)]
    Densify(#[from] DensifyError),
    #[error(transparent)]
    Sid(#[from] SidError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Inference,
    Supervision,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Inference => write!(f, "inference"),
            Self::Supervision => write!(f, "supervision"),
        }
    }
}

/// The radar input variant (inference) or supervision signal (supervision).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalVariant {
    Raw,
    HeightExtended,
    Mer,
    /// Control arm of the supervision experiment only.
    DensifiedLidar,
}

impl fmt::Display for SignalVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Raw => write!(f, "raw"),
            Self::HeightExtended => write!(f, "height_extended"),
            Self::Mer => write!(f, "mer"),
            Self::DensifiedLidar => write!(f, "densified_lidar"),
        }
    }
}

/// Radar preprocessing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepParams {
    /// Sweeps accumulated per frame: the current one plus up to
    /// `sweeps - 1` previous frames.
    pub sweeps: usize,
    pub height_min: f64,
    pub height_max: f64,
    pub height_step: f64,
    pub pda_min: f64,
}

impl Default for PrepParams {
    fn default() -> Self {
        Self {
            sweeps: 5,
            height_min: crate::radar::HEIGHT_EXTEND_MIN,
            height_max: crate::radar::HEIGHT_EXTEND_MAX,
            height_step: crate::radar::HEIGHT_EXTEND_STEP,
            pda_min: crate::radar::DEFAULT_PDA_MIN,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub variant: SignalVariant,
    pub cap: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prep: PrepParams,
    pub dataset: PathBuf,
    /// Run seed; overrides `train.seed`.
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.cap != 50.0 && self.cap != 80.0 {
            return Err(ExperimentError::InvalidSpec(format!(
                "cap must be 50 or 80 m, got {}",
                self.cap
            )));
        }
        if self.kind == ExperimentKind::Inference && self.variant == SignalVariant::DensifiedLidar
        {
            return Err(ExperimentError::InvalidSpec(
                "the inference experiment takes a radar variant as input".into(),
            ));
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    fn sid(&self) -> Option<SIDConfig> {
        match self.model.head {
            HeadKind::Regression => None,
            HeadKind::Ordinal { bins } => {
                Some(SIDConfig::new(1.0, 80.0, bins).expect("bins validated"))
            }
        }
    }
}

/// Projects the frame's lidar cloud (camera frame) into a sparse depth map.
pub fn lidar_depth_map(
    reader: &DatasetReader,
    frame: usize,
) -> Result<SparseDepthImage, ExperimentError> {
    let k = reader.intrinsics(frame)?;
    let cloud = reader.lidar(frame)?;
    Ok(project_to_depth(&cloud, &k))
}

/// Builds the requested radar input variant for one frame as a sparse depth
/// image in the frame's camera.
pub fn build_radar_input(
    reader: &DatasetReader,
    frame: usize,
    variant: SignalVariant,
    prep: &PrepParams,
) -> Result<SparseDepthImage, ExperimentError> {
    let k = reader.intrinsics(frame)?;
    match variant {
        SignalVariant::Mer => {
            let mer = reader
                .mer(frame)?
                .ok_or(ExperimentError::MissingMer { frame })?;
            Ok(mer_threshold(&mer, prep.pda_min)?)
        }
        SignalVariant::Raw | SignalVariant::HeightExtended => {
            let first = frame.saturating_sub(prep.sweeps.saturating_sub(1));
            let sweeps: Vec<_> = (first..=frame)
                .map(|i| reader.radar_sweep(i))
                .collect::<Result<_, _>>()?;
            let reference = reader.pose(frame)?.inverse();
            let cloud_cam = match variant {
                SignalVariant::Raw => accumulate_sweeps(&sweeps, &reference)?,
                SignalVariant::HeightExtended => {
                    // Gather in the world frame, extend vertically, then move
                    // into the reference camera.
                    let world = accumulate_sweeps(&sweeps, &SE3Pose::identity())?;
                    let extended = height_extend(
                        &world,
                        prep.height_min,
                        prep.height_max,
                        prep.height_step,
                    )?;
                    transform_points(&reference, &extended)
                }
                _ => unreachable!(),
            };
            Ok(project_to_depth(&cloud_cam, &k))
        }
        SignalVariant::DensifiedLidar => Err(ExperimentError::InvalidSpec(
            "densified lidar is a supervision signal, not a radar input".into(),
        )),
    }
}

/// Densified ground truth for one frame: sparse projected lidar interpolated
/// along the intensity image.
pub fn densified_gt(
    reader: &DatasetReader,
    frame: usize,
) -> Result<DenseDepthImage, ExperimentError> {
    let gray = reader.gray(frame)?;
    let lidar = lidar_depth_map(reader, frame)?;
    Ok(densify_depth(&gray, &lidar)?)
}

fn sparse_to_input(map: &SparseDepthImage) -> Tensor3 {
    let data: Vec<f64> = map.data().iter().map(|&d| d / INPUT_DEPTH_SCALE).collect();
    Tensor3::from_data(1, map.height(), map.width(), data)
}

fn gray_to_input(gray: &GrayImage) -> Tensor3 {
    Tensor3::from_data(1, gray.height(), gray.width(), gray.data().to_vec())
}

fn make_target(
    depth: &SparseDepthImage,
    sid: Option<&SIDConfig>,
) -> Result<TrainTarget, ExperimentError> {
    match sid {
        None => Ok(TrainTarget::Depth(depth.clone())),
        Some(cfg) => Ok(TrainTarget::Ordinal(encode_map(depth, cfg))),
    }
}

/// Decodes model output to a dense depth map (ordinal heads go through
/// label counting and bin midpoints).
pub fn predict_depth(
    model: &TinyDepth,
    input: &Tensor3,
    sid: Option<&SIDConfig>,
) -> Result<DenseDepthImage, ExperimentError> {
    match model.predict(input)? {
        ModelOutput::Depth(d) => Ok(d),
        ModelOutput::Probs(p) => {
            let cfg = sid.ok_or_else(|| {
                ExperimentError::InvalidSpec("ordinal model without SID config".into())
            })?;
            let labels = probs_to_labels(&p);
            let mut data = vec![0.0; p.width() * p.height()];
            for v in 0..p.height() {
                for u in 0..p.width() {
                    data[v * p.width() + u] = cfg.decode_bin(labels.label(u, v))?;
                }
            }
            Ok(DenseDepthImage::from_data(p.width(), p.height(), data)?)
        }
    }
}

/// Pooled metrics plus per-frame means over frames with valid pixels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pooled: MetricsReport,
    pub per_frame_mean_delta1: f64,
    pub per_frame_mean_delta2: f64,
    pub per_frame_mean_delta3: f64,
    pub per_frame_mean_rmse: f64,
    pub per_frame_mean_absrel: f64,
    pub frames_evaluated: usize,
}

fn summarize(
    pairs: &[(DenseDepthImage, SparseDepthImage)],
    cap: f64,
) -> Result<EvalSummary, ExperimentError> {
    let mut acc = MetricsAccumulator::new(cap);
    let mut frame_reports = Vec::new();
    for (pred, target) in pairs {
        acc.push(pred, target)?;
        match evaluate(pred, target, cap) {
            Ok(r) => frame_reports.push(r),
            Err(MetricsError::EmptyValidSet(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let pooled = acc.finish()?;
    let n = frame_reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| frame_reports.iter().map(f).sum::<f64>() / n;
    Ok(EvalSummary {
        pooled,
        per_frame_mean_delta1: mean(|r| r.delta1),
        per_frame_mean_delta2: mean(|r| r.delta2),
        per_frame_mean_delta3: mean(|r| r.delta3),
        per_frame_mean_rmse: mean(|r| r.rmse),
        per_frame_mean_absrel: mean(|r| r.absrel),
        frames_evaluated: frame_reports.len(),
    })
}

/// RMSE of the best single constant predictor against the pooled targets
/// (the constant is the pooled mean; the RMSE is the population standard
/// deviation).
pub fn best_constant_rmse(targets: &[SparseDepthImage], cap: f64) -> Option<f64> {
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for t in targets {
        for &v in t.data() {
            if v > 0.0 && v <= cap {
                count += 1;
                sum += v;
                sum_sq += v * v;
            }
        }
    }
    if count == 0 {
        return None;
    }
    let n = count as f64;
    let mean = sum / n;
    Some((sum_sq / n - mean * mean).max(0.0).sqrt())
}

/// Flat report record written as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub kind: ExperimentKind,
    pub variant: SignalVariant,
    pub cap: f64,
    pub seed: u64,
    pub n_frames: usize,
    pub epochs: usize,
    pub loss_first_epoch: f64,
    pub loss_final_epoch: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub rmse: f64,
    /// Mean |pred-target| / |pred|.
    pub absrel: f64,
    /// Mean |pred-target| / |target|.
    pub absrel_target: f64,
    pub valid_pixel_count: usize,
    pub per_frame_mean_delta1: f64,
    pub per_frame_mean_delta2: f64,
    pub per_frame_mean_delta3: f64,
    pub per_frame_mean_rmse: f64,
    pub per_frame_mean_absrel: f64,
    pub frames_evaluated: usize,
    pub best_constant_rmse: f64,
}

/// Everything a run produced.
pub struct RunArtifacts {
    pub report: ExperimentReport,
    pub report_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub manifest_path: PathBuf,
    pub epoch_losses: Vec<f64>,
    /// Files the training-phase reader opened (evaluation reads excluded).
    pub training_access_log: Vec<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub spec: ExperimentSpec,
    pub input_hashes: BTreeMap<String, String>,
}

/// SHA-256 of every file in every frame directory, keyed by relative path.
pub fn hash_dataset(dataset: &Path) -> Result<BTreeMap<String, String>, ExperimentError> {
    let mut out = BTreeMap::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(dataset)
        .map_err(io_err(dataset))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("frame_"))
        })
        .collect();
    dirs.sort();
    for dir in dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let bytes = fs::read(&file).map_err(io_err(&file))?;
            let digest = Sha256::digest(&bytes);
            let rel = format!(
                "{}/{}",
                dir.file_name().unwrap().to_string_lossy(),
                file.file_name().unwrap().to_string_lossy()
            );
            out.insert(rel, hex_string(&digest));
        }
    }
    Ok(out)
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Json(e.to_string()))?;
    fs::write(path, json + "\n").map_err(io_err(path))
}

/// Runs the experiment described by the spec, writing all artifacts under
/// `out_dir`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let sid = spec.sid();

    // Training phase: its reader records exactly what training touched.
    let train_reader = DatasetReader::open(&spec.dataset)?;
    let n = train_reader.len();
    let samples: Vec<TrainSample> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<TrainSample, ExperimentError> {
            match spec.kind {
                ExperimentKind::Inference => {
                    let input_map = build_radar_input(&train_reader, i, spec.variant, &spec.prep)?;
                    let gt = densified_gt(&train_reader, i)?;
                    Ok(TrainSample {
                        input: sparse_to_input(&input_map),
                        target: make_target(&gt.as_sparse(), sid.as_ref())?,
                    })
                }
                ExperimentKind::Supervision => {
                    let gray = train_reader.gray(i)?;
                    let target_map = match spec.variant {
                        SignalVariant::DensifiedLidar => densified_gt(&train_reader, i)?.as_sparse(),
                        radar => build_radar_input(&train_reader, i, radar, &spec.prep)?,
                    };
                    Ok(TrainSample {
                        input: gray_to_input(&gray),
                        target: make_target(&target_map, sid.as_ref())?,
                    })
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let fit_result = fit(&samples, spec.model, spec.train_config())?;
    let training_access_log = train_reader.access_log();

    // Prediction and evaluation phase on a fresh reader.
    let eval_reader = DatasetReader::open(&spec.dataset)?;
    let preds_dir = out_dir.join("preds");
    fs::create_dir_all(&preds_dir).map_err(io_err(&preds_dir))?;
    let model = &fit_result.model;
    let pairs: Vec<(DenseDepthImage, SparseDepthImage)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(DenseDepthImage, SparseDepthImage), ExperimentError> {
            let pred = predict_depth(model, &samples[i].input, sid.as_ref())?;
            let target = lidar_depth_map(&eval_reader, i)?;
            let base = preds_dir.join(frame_dir_name(i));
            write_pfm(
                &base.with_extension("pfm"),
                pred.width(),
                pred.height(),
                pred.data(),
            )?;
            emit_depth_image(&pred, &base.with_extension("pgm"), VIS_MAX_DEPTH)?;
            Ok((pred, target))
        })
        .collect::<Result<_, _>>()?;

    let summary = summarize(&pairs, spec.cap)?;
    let targets: Vec<SparseDepthImage> = pairs.into_iter().map(|(_, t)| t).collect();
    let baseline = best_constant_rmse(&targets, spec.cap)
        .ok_or(MetricsError::EmptyValidSet(spec.cap))?;

    let report = ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind: spec.kind,
        variant: spec.variant,
        cap: spec.cap,
        seed: spec.seed,
        n_frames: n,
        epochs: spec.train.epochs,
        loss_first_epoch: *fit_result.epoch_losses.first().unwrap(),
        loss_final_epoch: *fit_result.epoch_losses.last().unwrap(),
        delta1: summary.pooled.delta1,
        delta2: summary.pooled.delta2,
        delta3: summary.pooled.delta3,
        rmse: summary.pooled.rmse,
        absrel: summary.pooled.absrel,
        absrel_target: summary.pooled.absrel_target,
        valid_pixel_count: summary.pooled.valid_pixel_count,
        per_frame_mean_delta1: summary.per_frame_mean_delta1,
        per_frame_mean_delta2: summary.per_frame_mean_delta2,
        per_frame_mean_delta3: summary.per_frame_mean_delta3,
        per_frame_mean_rmse: summary.per_frame_mean_rmse,
        per_frame_mean_absrel: summary.per_frame_mean_absrel,
        frames_evaluated: summary.frames_evaluated,
        best_constant_rmse: baseline,
    };

    let report_path = out_dir.join("report.json");
    write_json(&report_path, &report)?;
    let checkpoint_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&checkpoint_path, model)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        input_hashes: hash_dataset(&spec.dataset)?,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    // Epoch losses for offline inspection.
    let loss_log: Vec<String> = fit_result
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(e, l)| format!("{e},{l}"))
        .collect();
    let loss_path = out_dir.join("loss_log.csv");
    fs::write(&loss_path, format!("epoch,loss\n{}\n", loss_log.join("\n")))
        .map_err(io_err(&loss_path))?;

    Ok(RunArtifacts {
        report,
        report_path,
        checkpoint_path,
        manifest_path,
        epoch_losses: fit_result.epoch_losses,
        training_access_log,
    })
}

/// Re-runs an experiment from its manifest after verifying that the dataset
/// content hashes still match.
pub fn rerun_from_manifest(
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| ExperimentError::Json(e.to_string()))?;
    let current = hash_dataset(&manifest.spec.dataset)?;
    if current != manifest.input_hashes {
        let path = manifest
            .input_hashes
            .iter()
            .find(|(k, v)| current.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .or_else(|| current.keys().next().cloned())
            .unwrap_or_default();
        return Err(ExperimentError::HashMismatch { path });
    }
    run_experiment(&manifest.spec, out_dir)
}

/// Evaluates stored predictions (`frame_NNNNNN.pfm` under `pred_dir`)
/// against the dataset's sparse lidar, pooling pixels across frames.
pub fn eval_cmd(
    pred_dir: &Path,
    dataset: &Path,
    cap: f64,
) -> Result<EvalSummary, ExperimentError> {
    let reader = DatasetReader::open(dataset)?;
    let pairs: Vec<(DenseDepthImage, SparseDepthImage)> = (0..reader.len())
        .map(|i| -> Result<_, ExperimentError> {
            let path = pred_dir.join(frame_dir_name(i)).with_extension("pfm");
            let (w, h, data) = read_pfm(&path).map_err(|_| ExperimentError::BadPrediction {
                frame: i,
                path: path.clone(),
            })?;
            let pred = DenseDepthImage::from_data(w, h, data).map_err(|_| {
                ExperimentError::BadPrediction {
                    frame: i,
                    path: path.clone(),
                }
            })?;
            let target = lidar_depth_map(&reader, i)?;
            if pred.width() != target.width() || pred.height() != target.height() {
                return Err(ExperimentError::BadPrediction { frame: i, path });
            }
            Ok((pred, target))
        })
        .collect::<Result<_, _>>()?;
    summarize(&pairs, cap)
}

/// Writes a depth map as a 16-bit grayscale PGM:
/// `value = round(65535 · min(depth, max_depth)/max_depth)`, ties up.
pub fn emit_depth_image(
    depth: &DenseDepthImage,
    path: &Path,
    max_depth: f64,
) -> Result<(), ExperimentError> {
    let data: Vec<f64> = depth
        .data()
        .iter()
        .map(|&d| d.min(max_depth) / max_depth)
        .collect();
    let gray = GrayImage::from_data(depth.width(), depth.height(), data)?;
    Ok(write_pgm16(path, &gray)?)
}

/// Sparse counterpart of [`emit_depth_image`]; invalid pixels emit 0.
pub fn emit_sparse_depth_image(
    depth: &SparseDepthImage,
    path: &Path,
    max_depth: f64,
) -> Result<(), ExperimentError> {
    let data: Vec<f64> = depth
        .data()
        .iter()
        .map(|&d| d.min(max_depth) / max_depth)
        .collect();
    let gray = GrayImage::from_data(depth.width(), depth.height(), data)?;
    Ok(write_pgm16(path, &gray)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;
    use crate::synth::{gen_sequence, SceneConfig, SensorModelConfig};
    use crate::geometry::CameraIntrinsics;
    use crate::synth::BoxObstacle;

    fn tiny_scene(seed: u64) -> SceneConfig {
        let mut scene = SceneConfig {
            seed,
            ..SceneConfig::default()
        };
        scene.boxes.push(BoxObstacle::still([0.0, -0.9, 12.0], [2.0, 1.8, 2.0], 0.7));
        scene.boxes.push(BoxObstacle::still([-3.0, -0.9, 20.0], [2.0, 1.8, 3.0], 0.85));
        scene.boxes.push(BoxObstacle::still([3.0, -0.9, 30.0], [2.0, 1.8, 3.0], 0.6));
        scene
    }

    fn tiny_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(40.0, 40.0, 32.0, 8.0, 64, 32).unwrap()
    }

    fn tiny_dataset(dir: &Path, frames: usize, seed: u64) {
        gen_sequence(
            &tiny_scene(seed),
            &SensorModelConfig::default(),
            &tiny_intrinsics(),
            frames,
            seed,
            dir,
        )
        .unwrap();
    }

    fn tiny_spec(dataset: &Path, kind: ExperimentKind, variant: SignalVariant) -> ExperimentSpec {
        ExperimentSpec {
            kind,
            variant,
            cap: 80.0,
            model: ModelConfig {
                in_channels: 1,
                base_width: 4,
                encoder_depth: 2,
                head: HeadKind::Regression,
            },
            train: TrainConfig {
                initial_lr: 0.05,
                epochs: 3,
                batch_size: 4,
                ..TrainConfig::default()
            },
            prep: PrepParams::default(),
            dataset: dataset.to_path_buf(),
            seed: 7,
        }
    }

    #[test]
    fn inference_run_produces_artifacts_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 5, 3);
        let spec = tiny_spec(&data_dir, ExperimentKind::Inference, SignalVariant::Raw);

        let out_a = dir.path().join("run_a");
        let a = run_experiment(&spec, &out_a).unwrap();
        assert!(a.report_path.exists());
        assert!(a.checkpoint_path.exists());
        assert!(a.manifest_path.exists());
        assert!(out_a.join("preds").join("frame_000000.pfm").exists());
        assert!(out_a.join("preds").join("frame_000000.pgm").exists());
        assert!(a.report.rmse.is_finite());
        assert!(a.report.delta1 >= 0.0 && a.report.delta1 <= 1.0);
        assert_eq!(a.report.n_frames, 5);

        let out_b = dir.path().join("run_b");
        let b = run_experiment(&spec, &out_b).unwrap();
        assert_eq!(
            fs::read(&a.report_path).unwrap(),
            fs::read(&b.report_path).unwrap()
        );
        assert_eq!(
            fs::read(&a.checkpoint_path).unwrap(),
            fs::read(&b.checkpoint_path).unwrap()
        );
    }

    #[test]
    fn rerun_from_manifest_reproduces_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 4, 9);
        let spec = tiny_spec(&data_dir, ExperimentKind::Inference, SignalVariant::HeightExtended);
        let out_a = dir.path().join("first");
        let a = run_experiment(&spec, &out_a).unwrap();
        let out_b = dir.path().join("second");
        let b = rerun_from_manifest(&a.manifest_path, &out_b).unwrap();
        assert_eq!(
            fs::read(&a.report_path).unwrap(),
            fs::read(&b.report_path).unwrap()
        );
        assert_eq!(
            fs::read(&a.checkpoint_path).unwrap(),
            fs::read(&b.checkpoint_path).unwrap()
        );
    }

    #[test]
    fn rerun_detects_tampered_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 3, 1);
        let spec = tiny_spec(&data_dir, ExperimentKind::Inference, SignalVariant::Raw);
        let out = dir.path().join("run");
        let a = run_experiment(&spec, &out).unwrap();
        // Tamper with one input file.
        let victim = data_dir.join("frame_000001").join("lidar.csv");
        let mut text = fs::read_to_string(&victim).unwrap();
        text.push_str("0,0,5\n");
        fs::write(&victim, text).unwrap();
        assert!(matches!(
            rerun_from_manifest(&a.manifest_path, &dir.path().join("again")),
            Err(ExperimentError::HashMismatch { .. })
        ));
    }

    #[test]
    fn supervision_training_never_reads_lidar() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 4, 5);
        for variant in [SignalVariant::Raw, SignalVariant::HeightExtended] {
            let spec = tiny_spec(&data_dir, ExperimentKind::Supervision, variant);
            let out = dir.path().join(format!("run_{variant}"));
            let artifacts = run_experiment(&spec, &out).unwrap();
            assert!(!artifacts.training_access_log.is_empty());
            for path in &artifacts.training_access_log {
                let name = path.file_name().unwrap().to_string_lossy();
                assert_ne!(name, "lidar.csv", "training read {path:?}");
                assert_ne!(name, "gt_depth.pfm", "training read {path:?}");
            }
        }
    }

    #[test]
    fn supervision_control_arm_runs() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 3, 2);
        let spec = tiny_spec(
            &data_dir,
            ExperimentKind::Supervision,
            SignalVariant::DensifiedLidar,
        );
        let artifacts = run_experiment(&spec, &dir.path().join("run")).unwrap();
        assert!(artifacts.report.rmse.is_finite());
    }

    #[test]
    fn invalid_spec_combinations_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec(dir.path(), ExperimentKind::Inference, SignalVariant::DensifiedLidar);
        assert!(matches!(
            spec.validate(),
            Err(ExperimentError::InvalidSpec(_))
        ));
        spec.variant = SignalVariant::Raw;
        spec.cap = 60.0;
        assert!(matches!(
            spec.validate(),
            Err(ExperimentError::InvalidSpec(_))
        ));
    }

    #[test]
    fn mer_variant_without_files_errors() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 2, 4);
        let reader = DatasetReader::open(&data_dir).unwrap();
        assert!(matches!(
            build_radar_input(&reader, 0, SignalVariant::Mer, &PrepParams::default()),
            Err(ExperimentError::MissingMer { frame: 0 })
        ));
    }

    #[test]
    fn mer_variant_reads_provided_files() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 2, 4);
        let mut mer = crate::radar::MERMap::new(64, 32);
        mer.push(10, 20, 14.0, 0.9).unwrap();
        mer.push(11, 20, 14.5, 0.3).unwrap();
        crate::dataset::write_mer_csv(&data_dir.join("frame_000000").join("mer.csv"), &mer)
            .unwrap();
        let reader = DatasetReader::open(&data_dir).unwrap();
        let map = build_radar_input(&reader, 0, SignalVariant::Mer, &PrepParams::default()).unwrap();
        assert_eq!(map.get(10, 20), 14.0);
        assert_eq!(map.valid_count(), 1);
    }

    #[test]
    fn eval_cmd_on_ground_truth_predictions_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 3, 6);
        let reader = DatasetReader::open(&data_dir).unwrap();
        let preds = dir.path().join("preds");
        fs::create_dir_all(&preds).unwrap();
        for i in 0..3 {
            let gt = reader.gt_depth(i).unwrap();
            write_pfm(
                &preds.join(frame_dir_name(i)).with_extension("pfm"),
                gt.width(),
                gt.height(),
                gt.data(),
            )
            .unwrap();
        }
        let summary = eval_cmd(&preds, &data_dir, 80.0).unwrap();
        // Lidar samples come from the same geometry the GT was rendered
        // from; rasterization puts a few samples on neighboring pixels, so
        // near-perfect is the expectation, not exactly 1.
        assert!(summary.pooled.delta1 > 0.95, "delta1 {}", summary.pooled.delta1);
        assert!(summary.pooled.rmse < 5.0);

        // Cap nesting: the 50 m valid set is a subset of the 80 m set.
        let capped = eval_cmd(&preds, &data_dir, 50.0).unwrap();
        assert!(capped.pooled.valid_pixel_count <= summary.pooled.valid_pixel_count);
    }

    #[test]
    fn eval_cmd_single_frame_matches_direct_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 1, 8);
        let reader = DatasetReader::open(&data_dir).unwrap();
        let preds = dir.path().join("preds");
        fs::create_dir_all(&preds).unwrap();
        let constant = DenseDepthImage::constant(64, 32, 9.0).unwrap();
        write_pfm(&preds.join("frame_000000.pfm"), 64, 32, constant.data()).unwrap();
        let summary = eval_cmd(&preds, &data_dir, 80.0).unwrap();
        let direct = evaluate(&constant, &lidar_depth_map(&reader, 0).unwrap(), 80.0).unwrap();
        assert_eq!(summary.pooled, direct);
        assert_eq!(summary.frames_evaluated, 1);
    }

    #[test]
    fn eval_cmd_missing_prediction_errors() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_dataset(&data_dir, 2, 8);
        let preds = dir.path().join("preds");
        fs::create_dir_all(&preds).unwrap();
        assert!(matches!(
            eval_cmd(&preds, &data_dir, 80.0),
            Err(ExperimentError::BadPrediction { frame: 0, .. })
        ));
    }

    #[test]
    fn emit_depth_image_quantization_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.pgm");
        let max = 80.0;
        let img = DenseDepthImage::from_data(3, 1, vec![80.0, 40.0, 100.0]).unwrap();
        emit_depth_image(&img, &path, max).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert!(bytes.starts_with(header));
        let px = &bytes[header.len()..];
        let v0 = u16::from_be_bytes([px[0], px[1]]);
        let v1 = u16::from_be_bytes([px[2], px[3]]);
        let v2 = u16::from_be_bytes([px[4], px[5]]);
        assert_eq!(v0, 65535); // depth = max
        assert_eq!(v1, 32768); // max/2, round half up
        assert_eq!(v2, 65535); // clamped above max
    }

    #[test]
    fn best_constant_baseline_is_population_std() {
        let t = SparseDepthImage::from_data(4, 1, vec![2.0, 4.0, 6.0, 0.0]).unwrap();
        let rmse = best_constant_rmse(&[t], 80.0).unwrap();
        // mean 4, variance (4+0+4)/3.
        assert!((rmse - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
