//! Evaluation metrics: δ1/δ2/δ3 threshold accuracies, RMSE, and AbsRel.
//!
//! Only pixels with a valid target depth no greater than the cap are scored;
//! target pixels above the cap are excluded, not clamped. `absrel` divides by
//! the prediction (the convention the rest of this crate reports by default);
//! `absrel_target` divides by the target, which most of the depth literature
//! uses, and is carried alongside.

use crate::geometry::{DenseDepthImage, SparseDepthImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: prediction {pred_w}x{pred_h}, target {target_w}x{target_h}")]
    ShapeMismatch {
        pred_w: usize,
        pred_h: usize,
        target_w: usize,
        target_h: usize,
    },
    #[error("no valid target pixels after applying the {0} m cap")]
    EmptyValidSet(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub rmse: f64,
    /// Mean |pred - target| / |pred|.
    pub absrel: f64,
    /// Mean |pred - target| / |target|.
    pub absrel_target: f64,
    pub valid_pixel_count: usize,
    pub cap: f64,
}

/// Pools valid pixels across any number of frames before computing metrics.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    cap: f64,
    count: usize,
    hits1: usize,
    hits2: usize,
    hits3: usize,
    sq_sum: f64,
    absrel_sum: f64,
    absrel_target_sum: f64,
}

impl MetricsAccumulator {
    pub fn new(cap: f64) -> Self {
        Self {
            cap,
            count: 0,
            hits1: 0,
            hits2: 0,
            hits3: 0,
            sq_sum: 0.0,
            absrel_sum: 0.0,
            absrel_target_sum: 0.0,
        }
    }

    pub fn push(
        &mut self,
        pred: &DenseDepthImage,
        target: &SparseDepthImage,
    ) -> Result<(), MetricsError> {
        if pred.width() != target.width() || pred.height() != target.height() {
            return Err(MetricsError::ShapeMismatch {
                pred_w: pred.width(),
                pred_h: pred.height(),
                target_w: target.width(),
                target_h: target.height(),
            });
        }
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            if t <= 0.0 || t > self.cap {
                continue;
            }
            self.count += 1;
            let ratio = (t / p).max(p / t);
            if ratio < 1.25 {
                self.hits1 += 1;
            }
            if ratio < 1.25f64.powi(2) {
                self.hits2 += 1;
            }
            if ratio < 1.25f64.powi(3) {
                self.hits3 += 1;
            }
            let diff = (p - t).abs();
            self.sq_sum += (p - t) * (p - t);
            self.absrel_sum += diff / p.abs();
            self.absrel_target_sum += diff / t.abs();
        }
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<MetricsReport, MetricsError> {
        if self.count == 0 {
            return Err(MetricsError::EmptyValidSet(self.cap));
        }
        let n = self.count as f64;
        Ok(MetricsReport {
            delta1: self.hits1 as f64 / n,
            delta2: self.hits2 as f64 / n,
            delta3: self.hits3 as f64 / n,
            rmse: (self.sq_sum / n).sqrt(),
            absrel: self.absrel_sum / n,
            absrel_target: self.absrel_target_sum / n,
            valid_pixel_count: self.count,
            cap: self.cap,
        })
    }
}

/// Scores one prediction against a sparse target under a depth cap.
pub fn evaluate(
    pred: &DenseDepthImage,
    target: &SparseDepthImage,
    cap: f64,
) -> Result<MetricsReport, MetricsError> {
    let mut acc = MetricsAccumulator::new(cap);
    acc.push(pred, target)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(w: usize, h: usize, data: Vec<f64>) -> DenseDepthImage {
        DenseDepthImage::from_data(w, h, data).unwrap()
    }

    fn sparse(w: usize, h: usize, data: Vec<f64>) -> SparseDepthImage {
        SparseDepthImage::from_data(w, h, data).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let data = vec![3.0, 10.0, 42.0, 7.5];
        let r = evaluate(&dense(2, 2, data.clone()), &sparse(2, 2, data), 80.0).unwrap();
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.absrel, 0.0);
        assert_eq!(r.valid_pixel_count, 4);
    }

    #[test]
    fn uniform_ratio_1p3() {
        let target_data = vec![2.0, 5.0, 10.0, 20.0];
        let pred_data: Vec<f64> = target_data.iter().map(|t| 1.3 * t).collect();
        let r = evaluate(
            &dense(2, 2, pred_data),
            &sparse(2, 2, target_data.clone()),
            80.0,
        )
        .unwrap();
        assert_eq!(r.delta1, 0.0); // 1.3 > 1.25
        assert_eq!(r.delta2, 1.0); // 1.3 < 1.5625
        let mean_sq: f64 = target_data.iter().map(|t| t * t).sum::<f64>() / 4.0;
        assert!(abs_diff_eq!(r.rmse, 0.3 * mean_sq.sqrt(), epsilon = 1e-12));
        assert!(abs_diff_eq!(r.absrel, 0.3 / 1.3, epsilon = 1e-12));
        assert!(abs_diff_eq!(r.absrel, 0.23077, epsilon = 1e-5));
        assert!(abs_diff_eq!(r.absrel_target, 0.3, epsilon = 1e-12));
    }

    #[test]
    fn random_cases_match_oracle_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let (w, h) = (16, 16);
            let cap = 50.0;
            let pred_data: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.5..90.0)).collect();
            let target_data: Vec<f64> = (0..w * h)
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        rng.gen_range(0.5..90.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let report = match evaluate(
                &dense(w, h, pred_data.clone()),
                &sparse(w, h, target_data.clone()),
                cap,
            ) {
                Ok(r) => r,
                Err(MetricsError::EmptyValidSet(_)) => continue,
                Err(e) => panic!("{e}"),
            };

            // Naive per-pixel loop.
            let mut n = 0usize;
            let (mut h1, mut h2, mut h3) = (0usize, 0usize, 0usize);
            let mut sq = 0.0;
            let mut ar = 0.0;
            let mut art = 0.0;
            for i in 0..w * h {
                let (p, t) = (pred_data[i], target_data[i]);
                if t <= 0.0 || t > cap {
                    continue;
                }
                n += 1;
                let ratio = (t / p).max(p / t);
                if ratio < 1.25 {
                    h1 += 1;
                }
                if ratio < 1.5625 {
                    h2 += 1;
                }
                if ratio < 1.953125 {
                    h3 += 1;
                }
                sq += (p - t) * (p - t);
                ar += (p - t).abs() / p;
                art += (p - t).abs() / t;
            }
            let nf = n as f64;
            assert_eq!(report.valid_pixel_count, n);
            assert!(abs_diff_eq!(report.delta1, h1 as f64 / nf, epsilon = 1e-12));
            assert!(abs_diff_eq!(report.delta2, h2 as f64 / nf, epsilon = 1e-12));
            assert!(abs_diff_eq!(report.delta3, h3 as f64 / nf, epsilon = 1e-12));
            assert!(abs_diff_eq!(report.rmse, (sq / nf).sqrt(), epsilon = 1e-12));
            assert!(abs_diff_eq!(report.absrel, ar / nf, epsilon = 1e-12));
            assert!(abs_diff_eq!(report.absrel_target, art / nf, epsilon = 1e-12));

            // Nesting and Jensen hold on every case.
            assert!(report.delta1 <= report.delta2 && report.delta2 <= report.delta3);
            let mae = target_data
                .iter()
                .zip(&pred_data)
                .filter(|(&t, _)| t > 0.0 && t <= cap)
                .map(|(&t, &p)| (p - t).abs())
                .sum::<f64>()
                / nf;
            assert!(report.rmse >= mae - 1e-12);
        }
    }

    #[test]
    fn invalid_and_above_cap_pixels_are_ignored() {
        let target_a = sparse(2, 2, vec![10.0, 0.0, 60.0, 20.0]);
        let target_b = sparse(2, 2, vec![10.0, 0.0, 75.0, 20.0]);
        let pred_a = dense(2, 2, vec![11.0, 5.0, 1.0, 19.0]);
        let pred_b = dense(2, 2, vec![11.0, 99.0, 777.0, 19.0]);
        // Cap 50 masks the 60/75 m pixels; the 0 pixel is invalid.
        let ra = evaluate(&pred_a, &target_a, 50.0).unwrap();
        let rb = evaluate(&pred_b, &target_b, 50.0).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.valid_pixel_count, 2);
    }

    #[test]
    fn empty_after_cap_is_error() {
        let target = sparse(1, 2, vec![70.0, 0.0]);
        let pred = dense(1, 2, vec![70.0, 70.0]);
        assert!(matches!(
            evaluate(&pred, &target, 50.0),
            Err(MetricsError::EmptyValidSet(_))
        ));
    }

    #[test]
    fn pooling_matches_concatenation() {
        let pred1 = dense(2, 1, vec![4.0, 9.0]);
        let target1 = sparse(2, 1, vec![5.0, 0.0]);
        let pred2 = dense(2, 1, vec![30.0, 2.0]);
        let target2 = sparse(2, 1, vec![28.0, 2.5]);
        let mut acc = MetricsAccumulator::new(80.0);
        acc.push(&pred1, &target1).unwrap();
        acc.push(&pred2, &target2).unwrap();
        let pooled = acc.finish().unwrap();

        let pred_all = dense(4, 1, vec![4.0, 9.0, 30.0, 2.0]);
        let target_all = sparse(4, 1, vec![5.0, 0.0, 28.0, 2.5]);
        let single = evaluate(&pred_all, &target_all, 80.0).unwrap();
        assert_eq!(pooled, single);
    }
}
