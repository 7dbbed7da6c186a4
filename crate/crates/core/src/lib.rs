//! Desk-scale toolkit for two questions about automotive radar: how much
//! depth a model can infer from radar alone, and how much depth supervision
//! radar can provide to a monocular image model.
//!
//! The crate provides the full pipeline: synthetic driving scenes with
//! simulated lidar and radar ([`synth`]), the three radar input variants
//! ([`radar`]), colorization densification of sparse lidar ([`densify`]),
//! spacing-increasing depth discretization ([`sid`]), masked L1 and ordinal
//! losses with analytic gradients ([`losses`]), a small trainable
//! encoder-decoder ([`model`]), the evaluation metric suite ([`metrics`]),
//! the on-disk dataset format ([`dataset`]), and the experiment runners
//! ([`experiment`]).

pub mod dataset;
pub mod densify;
pub mod experiment;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod radar;
pub mod sid;
pub mod synth;

pub use geometry::{
    backproject, project_to_depth, resize_crop_dense, resize_crop_sparse, transform_points,
    CameraIntrinsics, DenseDepthImage, GrayImage, PointCloud, SE3Pose, SparseDepthImage,
};
pub use losses::{l1_loss, ordinal_loss, LossNorm, LossResult, ProbabilityVolume};
pub use metrics::{evaluate, MetricsAccumulator, MetricsReport};
pub use radar::{accumulate_sweeps, height_extend, mer_threshold, MERMap, RadarSweep};
pub use sid::{encode_map, probs_to_labels, OrdinalLabelMap, SIDConfig};

pub use dataset::DatasetReader;
pub use experiment::{
    eval_cmd, rerun_from_manifest, run_experiment, ExperimentKind, ExperimentSpec, PrepParams,
    SignalVariant,
};
pub use model::{fit, HeadKind, ModelConfig, TinyDepth, TrainConfig};
