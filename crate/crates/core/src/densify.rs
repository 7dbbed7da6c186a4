//! Colorization-style densification of sparse depth.
//!
//! A sparse SPD system is assembled from an intensity image and depth
//! anchors, then solved with Jacobi-preconditioned conjugate gradient.
//! Smoothness residuals `d_r - Σ_{s∈N(r)} w_rs d_s` are formed at unanchored
//! pixels (anchored pixels carry only the data penalty), which keeps the
//! system positive definite for any connected image with at least one anchor
//! and lets piecewise-smooth solutions interpolate the anchors exactly.

use crate::geometry::{DenseDepthImage, GrayImage, SparseDepthImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DensifyError {
    #[error("anchor image {anchor_w}x{anchor_h} does not match intensity image {gray_w}x{gray_h}")]
    ShapeMismatch {
        gray_w: usize,
        gray_h: usize,
        anchor_w: usize,
        anchor_h: usize,
    },
    #[error("no valid anchor pixels")]
    NoAnchors,
    #[error("conjugate gradient did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("system is not symmetric positive definite: {0}")]
    NotSpd(String),
}

/// Parameters of the densifier.
#[derive(Debug, Clone, Copy)]
pub struct DensifyParams {
    /// Weight of the anchor data term.
    pub lambda_anchor: f64,
    /// Floor applied to the local intensity variance.
    pub variance_floor: f64,
    /// Relative residual tolerance of the CG solve.
    pub tol: f64,
    pub max_iter: usize,
    /// Floor applied to output depths so the result is strictly positive.
    pub min_depth: f64,
}

impl Default for DensifyParams {
    fn default() -> Self {
        Self {
            lambda_anchor: 100.0,
            variance_floor: 1e-4,
            tol: 1e-8,
            max_iter: 20_000,
            min_depth: 1e-3,
        }
    }
}

/// Symmetric positive-definite sparse system `A x = b` in CSR form.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    dimension: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Row iterator yielding `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.dimension {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            out[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dimension];
        for i in 0..self.dimension {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }

    fn from_triplet_rows(rows: Vec<Vec<(usize, f64)>>, rhs: Vec<f64>) -> Result<Self, DensifyError> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut has_diag = false;
            for (c, v) in row {
                if c == i {
                    if v <= 0.0 {
                        return Err(DensifyError::NotSpd(format!(
                            "non-positive diagonal {v} at row {i}"
                        )));
                    }
                    has_diag = true;
                }
                col_idx.push(c);
                values.push(v);
            }
            if !has_diag {
                return Err(DensifyError::NotSpd(format!("missing diagonal at row {i}")));
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            dimension: n,
            row_ptr,
            col_idx,
            values,
            rhs,
        })
    }
}

/// Eight-neighborhood offsets.
const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Normalized affinity weights of the in-bounds 8-neighborhood of `(u, v)`:
/// `w_rs ∝ exp(-(I_r - I_s)² / (2 σ_r²))` with `σ_r²` the 3×3 local intensity
/// variance floored at `variance_floor`.
pub(crate) fn neighbor_weights(
    gray: &GrayImage,
    u: usize,
    v: usize,
    variance_floor: f64,
) -> Vec<(usize, f64)> {
    let (w, h) = (gray.width(), gray.height());
    let center = gray.get(u, v);

    // Local variance over the in-bounds 3x3 window (center included).
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0.0;
    for dv in -1isize..=1 {
        for du in -1isize..=1 {
            let (nu, nv) = (u as isize + du, v as isize + dv);
            if nu < 0 || nv < 0 || nu >= w as isize || nv >= h as isize {
                continue;
            }
            let val = gray.get(nu as usize, nv as usize);
            sum += val;
            sum_sq += val * val;
            count += 1.0;
        }
    }
    let mean = sum / count;
    let variance = (sum_sq / count - mean * mean).max(variance_floor);

    let mut weights = Vec::with_capacity(8);
    let mut total = 0.0;
    for (dv, du) in NEIGHBORS {
        let (nu, nv) = (u as isize + du, v as isize + dv);
        if nu < 0 || nv < 0 || nu >= w as isize || nv >= h as isize {
            continue;
        }
        let val = gray.get(nu as usize, nv as usize);
        let diff = center - val;
        let weight = (-(diff * diff) / (2.0 * variance)).exp();
        weights.push((nv as usize * w + nu as usize, weight));
        total += weight;
    }
    for (_, weight) in &mut weights {
        *weight /= total;
    }
    weights
}

/// Assembles the normal equations for explicit `(pixel index, depth)` anchors.
///
/// This is the level the colorization system is built at; the public
/// [`build_colorization_system`] derives the anchor list from a sparse depth
/// image. Exposing the list form keeps anchor values unconstrained by the
/// sparse image's zero-means-invalid convention.
pub fn build_system(
    gray: &GrayImage,
    anchors: &[(usize, f64)],
    lambda_anchor: f64,
    variance_floor: f64,
) -> Result<SparseSystem, DensifyError> {
    if anchors.is_empty() {
        return Err(DensifyError::NoAnchors);
    }
    let (w, h) = (gray.width(), gray.height());
    let n = w * h;
    let mut is_anchor = vec![false; n];
    for &(idx, _) in anchors {
        is_anchor[idx] = true;
    }

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = vec![0.0; n];

    let mut add = |rows: &mut Vec<Vec<(usize, f64)>>, i: usize, j: usize, v: f64| {
        let row = &mut rows[i];
        match row.iter_mut().find(|(c, _)| *c == j) {
            Some((_, existing)) => *existing += v,
            None => row.push((j, v)),
        }
    };

    // Smoothness residual rows at unanchored pixels, accumulated as CᵀC.
    let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(9);
    for v in 0..h {
        for u in 0..w {
            let r = v * w + u;
            if is_anchor[r] {
                continue;
            }
            coeffs.clear();
            coeffs.push((r, 1.0));
            for (idx, weight) in neighbor_weights(gray, u, v, variance_floor) {
                coeffs.push((idx, -weight));
            }
            for &(i, ci) in coeffs.iter() {
                for &(j, cj) in coeffs.iter() {
                    add(&mut rows, i, j, ci * cj);
                }
            }
        }
    }

    for &(idx, depth) in anchors {
        add(&mut rows, idx, idx, lambda_anchor);
        rhs[idx] += lambda_anchor * depth;
    }

    SparseSystem::from_triplet_rows(rows, rhs)
}

/// Builds the colorization system from a sparse anchor depth image.
pub fn build_colorization_system(
    gray: &GrayImage,
    anchors: &SparseDepthImage,
    lambda_anchor: f64,
) -> Result<SparseSystem, DensifyError> {
    if gray.width() != anchors.width() || gray.height() != anchors.height() {
        return Err(DensifyError::ShapeMismatch {
            gray_w: gray.width(),
            gray_h: gray.height(),
            anchor_w: anchors.width(),
            anchor_h: anchors.height(),
        });
    }
    let list: Vec<(usize, f64)> = anchors
        .iter_valid()
        .map(|(u, v, d)| (v * anchors.width() + u, d))
        .collect();
    build_system(gray, &list, lambda_anchor, DensifyParams::default().variance_floor)
}

/// Jacobi-preconditioned conjugate gradient.
///
/// Returns `x` with `‖Ax - b‖/‖b‖ <= tol`; the true residual is recomputed
/// before returning so the contract holds on every success.
pub fn solve_cg(sys: &SparseSystem, tol: f64, max_iter: usize) -> Result<Vec<f64>, DensifyError> {
    let n = sys.dimension();
    let b = sys.rhs();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let diag = sys.diagonal();
    let inv_diag: Vec<f64> = diag.iter().map(|&d| 1.0 / d).collect();

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(&ri, &di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for iter in 0..max_iter {
        sys.matvec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) / b_norm <= tol {
            // Guard against drift of the recursively updated residual.
            sys.matvec(&x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            if norm(&r) / b_norm <= tol {
                return Ok(x);
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if iter + 1 == max_iter {
            sys.matvec(&x, &mut ap);
            let res: f64 = (0..n).map(|i| (b[i] - ap[i]).powi(2)).sum::<f64>().sqrt();
            return Err(DensifyError::NotConverged {
                iterations: max_iter,
                residual: res / b_norm,
            });
        }
    }
    unreachable!("loop returns or errors at max_iter");
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Densifies sparse lidar depth guided by the intensity image.
pub fn densify_depth(
    gray: &GrayImage,
    lidar: &SparseDepthImage,
) -> Result<DenseDepthImage, DensifyError> {
    densify_depth_with(gray, lidar, &DensifyParams::default())
}

pub fn densify_depth_with(
    gray: &GrayImage,
    lidar: &SparseDepthImage,
    params: &DensifyParams,
) -> Result<DenseDepthImage, DensifyError> {
    if gray.width() != lidar.width() || gray.height() != lidar.height() {
        return Err(DensifyError::ShapeMismatch {
            gray_w: gray.width(),
            gray_h: gray.height(),
            anchor_w: lidar.width(),
            anchor_h: lidar.height(),
        });
    }
    let list: Vec<(usize, f64)> = lidar
        .iter_valid()
        .map(|(u, v, d)| (v * lidar.width() + u, d))
        .collect();
    let sys = build_system(gray, &list, params.lambda_anchor, params.variance_floor)?;
    let solution = solve_cg(&sys, params.tol, params.max_iter)?;
    let data: Vec<f64> = solution.iter().map(|&d| d.max(params.min_depth)).collect();
    DenseDepthImage::from_data(gray.width(), gray.height(), data)
        .map_err(|e| DensifyError::NotSpd(format!("solution validation failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian-elimination oracle with partial pivoting.
    fn solve_dense(a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= a[row][k] * x[k];
            }
            x[row] = acc / a[row][row];
        }
        x
    }

    fn to_dense(sys: &SparseSystem) -> Vec<Vec<f64>> {
        let n = sys.dimension();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for (j, v) in sys.row(i) {
                a[i][j] = v;
            }
        }
        a
    }

    fn residual(sys: &SparseSystem, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; sys.dimension()];
        sys.matvec(x, &mut ax);
        let num: f64 = ax
            .iter()
            .zip(sys.rhs())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = sys.rhs().iter().map(|b| b * b).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn stored_entries_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gray_data: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..1.0)).collect();
        let gray = GrayImage::from_data(8, 6, gray_data).unwrap();
        let anchors = vec![(5usize, 4.0), (30, 9.0)];
        let sys = build_system(&gray, &anchors, 100.0, 1e-4).unwrap();
        let dense = to_dense(&sys);
        for i in 0..sys.dimension() {
            for j in 0..sys.dimension() {
                assert!(
                    (dense[i][j] - dense[j][i]).abs() <= 1e-12,
                    "asymmetry at ({i},{j})"
                );
            }
            assert!(dense[i][i] > 0.0);
        }
    }

    #[test]
    fn constant_image_single_anchor_gives_constant() {
        let gray = GrayImage::constant(5, 4, 0.5).unwrap();
        let mut anchors = SparseDepthImage::empty(5, 4);
        anchors.set(2, 1, 7.0);
        let sys = build_colorization_system(&gray, &anchors, 100.0).unwrap();
        let x = solve_cg(&sys, 1e-10, 10_000).unwrap();
        for &v in &x {
            assert!((v - 7.0).abs() <= 1e-6, "got {v}");
        }
    }

    #[test]
    fn strip_with_end_anchors_gives_linear_ramp() {
        // Anchors 0 m at pixel 0 and 7 m at pixel 7; matches a direct solve.
        let gray = GrayImage::constant(8, 1, 0.5).unwrap();
        let anchors = vec![(0usize, 0.0), (7, 7.0)];
        let sys = build_system(&gray, &anchors, 100.0, 1e-4).unwrap();
        let x = solve_cg(&sys, 1e-10, 10_000).unwrap();
        for (i, &v) in x.iter().enumerate() {
            assert!((v - i as f64).abs() <= 1e-6, "pixel {i}: {v}");
        }
        let oracle = solve_dense(&mut to_dense(&sys), &mut sys.rhs().to_vec());
        for i in 0..8 {
            assert!((x[i] - oracle[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn empty_anchors_rejected() {
        let gray = GrayImage::constant(4, 4, 0.5).unwrap();
        let anchors = SparseDepthImage::empty(4, 4);
        assert!(matches!(
            build_colorization_system(&gray, &anchors, 100.0),
            Err(DensifyError::NoAnchors)
        ));
    }

    #[test]
    fn cg_identity_converges_immediately() {
        let rows = (0..5).map(|i| vec![(i, 1.0)]).collect();
        let sys =
            SparseSystem::from_triplet_rows(rows, vec![3.0, -1.0, 2.0, 0.5, 9.0]).unwrap();
        let x = solve_cg(&sys, 1e-12, 10).unwrap();
        assert_eq!(x, vec![3.0, -1.0, 2.0, 0.5, 9.0]);
    }

    #[test]
    fn cg_diagonal_system() {
        let rows = vec![vec![(0, 1.0)], vec![(1, 2.0)], vec![(2, 4.0)]];
        let sys = SparseSystem::from_triplet_rows(rows, vec![1.0, 2.0, 4.0]).unwrap();
        let x = solve_cg(&sys, 1e-12, 10).unwrap();
        for &v in &x {
            assert!((v - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn cg_random_spd_matches_direct_oracle() {
        // A = MᵀM + I on 50 unknowns.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 50;
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    acc += m[k][i] * m[k][j];
                }
                a[i][j] = acc;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let rows: Vec<Vec<(usize, f64)>> = a
            .iter()
            .map(|row| row.iter().cloned().enumerate().collect())
            .collect();
        let sys = SparseSystem::from_triplet_rows(rows, b.clone()).unwrap();
        let x = solve_cg(&sys, 1e-12, 5000).unwrap();
        let oracle = solve_dense(&mut a.clone(), &mut b.clone());
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() <= 1e-6, "at {i}: {} vs {}", x[i], oracle[i]);
        }
        assert!(residual(&sys, &x) <= 1e-12);
    }

    #[test]
    fn cg_reports_non_convergence() {
        // 1D Laplacian chain; two iterations cannot reach 1e-12.
        let n = 40;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut row = vec![(i, 2.1)];
                if i > 0 {
                    row.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    row.push((i + 1, -1.0));
                }
                row
            })
            .collect();
        let sys = SparseSystem::from_triplet_rows(rows, vec![1.0; n]).unwrap();
        match solve_cg(&sys, 1e-12, 2) {
            Err(DensifyError::NotConverged { iterations: 2, residual }) => {
                assert!(residual.is_finite() && residual > 1e-12)
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn densify_reproduces_anchors_and_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let (w, h) = (rng.gen_range(2..12), rng.gen_range(2..10));
            let gray_data: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
            let gray = GrayImage::from_data(w, h, gray_data).unwrap();
            let mut lidar = SparseDepthImage::empty(w, h);
            let mut any = false;
            for v in 0..h {
                for u in 0..w {
                    if rng.gen_bool(0.25) {
                        lidar.set(u, v, rng.gen_range(1.0..50.0));
                        any = true;
                    }
                }
            }
            if !any {
                lidar.set(0, 0, 5.0);
            }
            let out = densify_depth(&gray, &lidar).unwrap();
            for (u, v, d) in lidar.iter_valid() {
                let rel = (out.get(u, v) - d).abs() / d;
                assert!(rel <= 0.01, "anchor ({u},{v}) drifted: {} vs {d}", out.get(u, v));
            }
            let sys = build_colorization_system(&gray, &lidar, 100.0).unwrap();
            let oracle = solve_dense(&mut to_dense(&sys), &mut sys.rhs().to_vec());
            for i in 0..w * h {
                assert!((out.data()[i] - oracle[i].max(1e-3)).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn checkerboard_weights_prefer_same_intensity() {
        let (w, h) = (5, 5);
        let data: Vec<f64> = (0..w * h)
            .map(|i| (((i % w) + (i / w)) % 2) as f64)
            .collect();
        let gray = GrayImage::from_data(w, h, data).unwrap();
        let weights = neighbor_weights(&gray, 2, 2, 1e-4);
        // Diagonal neighbors share the center color; axis neighbors differ.
        let same: f64 = weights
            .iter()
            .filter(|(idx, _)| {
                let (u, v) = (idx % w, idx / w);
                (u + v) % 2 == 0
            })
            .map(|(_, wgt)| *wgt)
            .sum::<f64>()
            / 4.0;
        let cross: f64 = weights
            .iter()
            .filter(|(idx, _)| {
                let (u, v) = (idx % w, idx / w);
                (u + v) % 2 == 1
            })
            .map(|(_, wgt)| *wgt)
            .sum::<f64>()
            / 4.0;
        assert!(same > 5.0 * cross, "same={same}, cross={cross}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn maximum_principle_constant_intensity(
            w in 2usize..9,
            h in 1usize..7,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gray = GrayImage::constant(w, h, 0.5).unwrap();
            let n = w * h;
            let count = rng.gen_range(1..=n.max(2) / 2.max(1) + 1);
            let mut anchors = Vec::new();
            let mut used = std::collections::HashSet::new();
            for _ in 0..count {
                let idx = rng.gen_range(0..n);
                if used.insert(idx) {
                    anchors.push((idx, rng.gen_range(1.0..50.0)));
                }
            }
            let lo = anchors.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
            let hi = anchors.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
            let sys = build_system(&gray, &anchors, 100.0, 1e-4).unwrap();
            let x = solve_cg(&sys, 1e-10, 20_000).unwrap();
            for &v in &x {
                prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6, "{v} outside [{lo}, {hi}]");
            }
        }

        #[test]
        fn cg_residual_contract(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (rng.gen_range(2..8), rng.gen_range(2..8));
            let gray_data: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
            let gray = GrayImage::from_data(w, h, gray_data).unwrap();
            let anchors = vec![(0usize, rng.gen_range(1.0..40.0))];
            let sys = build_system(&gray, &anchors, 100.0, 1e-4).unwrap();
            let tol = 1e-8;
            let x = solve_cg(&sys, tol, 20_000).unwrap();
            prop_assert!(residual(&sys, &x) <= tol);
        }
    }
}
