//! Spacing-increasing discretization of depth and ordinal label handling.
//!
//! Depth in [alpha, beta] is split into K bins whose widths grow
//! geometrically, so far ranges get coarser bins than near ranges.

use crate::geometry::SparseDepthImage;
use crate::losses::ProbabilityVolume;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SidError {
    #[error("invalid SID config: requires 0 < alpha < beta and K >= 2, got alpha={alpha}, beta={beta}, k={k}")]
    InvalidConfig { alpha: f64, beta: f64, k: usize },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("bin index {index} out of range for K={k}")]
    BinOutOfRange { index: usize, k: usize },
}

/// Log-uniform depth discretization over `[alpha, beta]` with `k` bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SIDConfig {
    alpha: f64,
    beta: f64,
    k: usize,
}

impl SIDConfig {
    pub fn new(alpha: f64, beta: f64, k: usize) -> Result<Self, SidError> {
        if !(alpha > 0.0 && alpha < beta && beta.is_finite()) || k < 2 {
            return Err(SidError::InvalidConfig { alpha, beta, k });
        }
        Ok(Self { alpha, beta, k })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bins(&self) -> usize {
        self.k
    }

    /// The K+1 bin edges `t_i = exp(log alpha + i (log beta - log alpha)/K)`.
    pub fn thresholds(&self) -> Vec<f64> {
        let la = self.alpha.ln();
        let lb = self.beta.ln();
        let k = self.k as f64;
        let mut t: Vec<f64> = (0..=self.k)
            .map(|i| (la + (i as f64) * (lb - la) / k).exp())
            .collect();
        // Pin the endpoints so t_0 = alpha and t_K = beta hold exactly.
        t[0] = self.alpha;
        t[self.k] = self.beta;
        t
    }

    /// Largest `i` with `t_i <= d`, clamped to `[0, K-1]`.
    pub fn encode_depth(&self, d: f64) -> Result<usize, SidError> {
        if d <= 0.0 {
            return Err(SidError::NonPositiveDepth(d));
        }
        let t = self.thresholds();
        Ok(encode_with_thresholds(&t, d))
    }

    /// Geometric midpoint of bin `i`; inverse of `encode_depth` on bin indices.
    pub fn decode_bin(&self, i: usize) -> Result<f64, SidError> {
        if i >= self.k {
            return Err(SidError::BinOutOfRange { index: i, k: self.k });
        }
        let t = self.thresholds();
        Ok((t[i] * t[i + 1]).sqrt())
    }
}

impl Default for SIDConfig {
    /// 1 m to 80 m in 80 bins, matching the 80 m evaluation cap.
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 80.0,
            k: 80,
        }
    }
}

pub(crate) fn encode_with_thresholds(t: &[f64], d: f64) -> usize {
    let k = t.len() - 1;
    if d < t[0] {
        return 0;
    }
    if d >= t[k] {
        return k - 1;
    }
    // Binary search: largest i with t[i] <= d.
    let mut lo = 0usize;
    let mut hi = k;
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if t[mid] <= d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Per-pixel ordinal labels in `[0, K-1]` with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalLabelMap {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    mask: Vec<bool>,
}

impl OrdinalLabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<usize>, mask: Vec<bool>) -> Self {
        assert_eq!(labels.len(), width * height);
        assert_eq!(mask.len(), width * height);
        Self {
            width,
            height,
            labels,
            mask,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn label(&self, u: usize, v: usize) -> usize {
        self.labels[v * self.width + u]
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.mask[v * self.width + u]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Encodes a sparse depth map into ordinal labels; invalid pixels stay masked.
pub fn encode_map(depth: &SparseDepthImage, cfg: &SIDConfig) -> OrdinalLabelMap {
    let t = cfg.thresholds();
    let n = depth.width() * depth.height();
    let mut labels = vec![0usize; n];
    let mut mask = vec![false; n];
    for (i, &d) in depth.data().iter().enumerate() {
        if d > 0.0 {
            labels[i] = encode_with_thresholds(&t, d);
            mask[i] = true;
        }
    }
    OrdinalLabelMap::new(depth.width(), depth.height(), labels, mask)
}

/// Decodes per-pixel probabilities into labels by counting confident
/// "depth exceeds bin k" decisions: `label = Σ_k 1[P^k >= 0.5]`, clamped to K-1.
pub fn probs_to_labels(p: &ProbabilityVolume) -> OrdinalLabelMap {
    let (w, h, k) = (p.width(), p.height(), p.bins());
    let mut labels = vec![0usize; w * h];
    for v in 0..h {
        for u in 0..w {
            let count = (0..k).filter(|&b| p.get(u, v, b) >= 0.5).count();
            labels[v * w + u] = count.min(k - 1);
        }
    }
    OrdinalLabelMap::new(w, h, labels, vec![true; w * h])
}
