//! Masked L1 and ordinal regression losses with analytic gradients.
//!
//! Both losses skip pixels where the target is invalid, and by default
//! normalize by the number of valid pixels rather than the full image area
//! (the full-area variant is available through [`LossNorm::FullArea`]).

use crate::geometry::{DenseDepthImage, SparseDepthImage};
use crate::sid::OrdinalLabelMap;
use thiserror::Error;

/// Probabilities are clamped into `[CLAMP_EPS, 1 - CLAMP_EPS]` so the ordinal
/// log terms stay finite.
pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: prediction {pred_w}x{pred_h}, target {target_w}x{target_h}")]
    ShapeMismatch {
        pred_w: usize,
        pred_h: usize,
        target_w: usize,
        target_h: usize,
    },
    #[error("no valid target pixels")]
    NoValidPixels,
    #[error("bin count mismatch: volume has {volume} bins, label {label} out of range")]
    BinMismatch { volume: usize, label: usize },
}

/// H×W×K probabilities, stored with K contiguous per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    width: usize,
    height: usize,
    bins: usize,
    data: Vec<f64>,
}

impl ProbabilityVolume {
    /// Builds a volume, clamping every entry into `[CLAMP_EPS, 1 - CLAMP_EPS]`.
    pub fn from_data(
        width: usize,
        height: usize,
        bins: usize,
        mut data: Vec<f64>,
    ) -> Result<Self, LossError> {
        if data.len() != width * height * bins {
            return Err(LossError::ShapeMismatch {
                pred_w: width,
                pred_h: height,
                target_w: data.len() / bins.max(1),
                target_h: 1,
            });
        }
        for v in &mut data {
            *v = v.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
        }
        Ok(Self {
            width,
            height,
            bins,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn get(&self, u: usize, v: usize, k: usize) -> f64 {
        self.data[(v * self.width + u) * self.bins + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Loss value plus the gradient with respect to the differentiated input,
/// flattened in the input's storage order.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Normalization of the per-pixel sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossNorm {
    /// Divide by the number of valid target pixels (default).
    ValidCount,
    /// Divide by W·H regardless of sparsity.
    FullArea,
}

/// Masked mean absolute error; the gradient w.r.t. the prediction is
/// `sign(pred - target) / M` at valid pixels and 0 elsewhere, with
/// `sign(0) = 0`.
pub fn l1_loss(pred: &DenseDepthImage, target: &SparseDepthImage) -> Result<LossResult, LossError> {
    l1_loss_with_norm(pred, target, LossNorm::ValidCount)
}

pub fn l1_loss_with_norm(
    pred: &DenseDepthImage,
    target: &SparseDepthImage,
    norm: LossNorm,
) -> Result<LossResult, LossError> {
    if pred.width() != target.width() || pred.height() != target.height() {
        return Err(LossError::ShapeMismatch {
            pred_w: pred.width(),
            pred_h: pred.height(),
            target_w: target.width(),
            target_h: target.height(),
        });
    }
    let valid = target.valid_count();
    if valid == 0 {
        return Err(LossError::NoValidPixels);
    }
    let m = match norm {
        LossNorm::ValidCount => valid as f64,
        LossNorm::FullArea => (pred.width() * pred.height()) as f64,
    };
    let mut value = 0.0;
    let mut gradient = vec![0.0; pred.data().len()];
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        if t > 0.0 {
            let diff = p - t;
            value += diff.abs();
            gradient[i] = if diff > 0.0 {
                1.0 / m
            } else if diff < 0.0 {
                -1.0 / m
            } else {
                0.0
            };
        }
    }
    Ok(LossResult {
        value: value / m,
        gradient,
    })
}

/// Ordinal loss over per-bin probabilities (average of pixel-wise sums of
/// binary log-likelihoods). The gradient w.r.t. `P^k` is `-1/(M·P^k)` for
/// `k < l` and `+1/(M·(1-P^k))` for `k >= l` at valid pixels.
pub fn ordinal_loss(
    p: &ProbabilityVolume,
    labels: &OrdinalLabelMap,
) -> Result<LossResult, LossError> {
    ordinal_loss_with_norm(p, labels, LossNorm::ValidCount)
}

pub fn ordinal_loss_with_norm(
    p: &ProbabilityVolume,
    labels: &OrdinalLabelMap,
    norm: LossNorm,
) -> Result<LossResult, LossError> {
    if p.width() != labels.width() || p.height() != labels.height() {
        return Err(LossError::ShapeMismatch {
            pred_w: p.width(),
            pred_h: p.height(),
            target_w: labels.width(),
            target_h: labels.height(),
        });
    }
    let valid = labels.valid_count();
    if valid == 0 {
        return Err(LossError::NoValidPixels);
    }
    let m = match norm {
        LossNorm::ValidCount => valid as f64,
        LossNorm::FullArea => (p.width() * p.height()) as f64,
    };
    let bins = p.bins();
    let mut value = 0.0;
    let mut gradient = vec![0.0; p.data().len()];
    for v in 0..p.height() {
        for u in 0..p.width() {
            if !labels.is_valid(u, v) {
                continue;
            }
            let label = labels.label(u, v);
            if label >= bins {
                return Err(LossError::BinMismatch {
                    volume: bins,
                    label,
                });
            }
            let base = (v * p.width() + u) * bins;
            for k in 0..bins {
                let prob = p.data()[base + k];
                if k < label {
                    value -= prob.ln();
                    gradient[base + k] = -1.0 / (m * prob);
                } else {
                    value -= (1.0 - prob).ln();
                    gradient[base + k] = 1.0 / (m * (1.0 - prob));
                }
            }
        }
    }
    Ok(LossResult {
        value: value / m,
        gradient,
    })
}
