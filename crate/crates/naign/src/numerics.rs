//! Dense f64 linear algebra and distance primitives.
//!
//! Everything downstream (losses, metrics, fields) funnels distance
//! computations through [`distance`] and [`nearest_point`] so that
//! reduction order is identical everywhere; several exactness tests
//! depend on that. All accumulation is in f64 even when model parameters
//! are stored in f32.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::threads;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * other`, parallel over output rows, fixed accumulation order.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        threads::for_each_row(&mut out.data, m, |i, row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (p, &av) in a.iter().enumerate() {
                let b = &other.data[p * m..(p + 1) * m];
                for (r, &bv) in row.iter_mut().zip(b) {
                    *r += av * bv;
                }
            }
        });
        out
    }

    /// `self * other^T` without materialising the transpose; `other` is
    /// read row by row, so both inner loops stay contiguous.
    pub fn matmul_bt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_bt inner dimension");
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(n, m);
        threads::for_each_row(&mut out.data, m, |i, row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (j, r) in row.iter_mut().enumerate() {
                let b = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (x, y) in a.iter().zip(b) {
                    acc += x * y;
                }
                *r = acc;
            }
        });
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// New matrix holding the listed rows of `self`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Distance used for matching and losses. `L2` is the Euclidean norm
/// (not squared); `L2Squared` is available where a smooth objective is
/// preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L1,
    L2,
    L2Squared,
}

impl Default for Metric {
    fn default() -> Self {
        Metric::L2
    }
}

/// Distance between two equal-length vectors. Accumulates left to right.
pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match metric {
        Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::L2 => squared_l2(a, b).sqrt(),
        Metric::L2Squared => squared_l2(a, b),
    }
}

fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Index and distance of the row of `ys` nearest to `x`. Ties break to
/// the lowest index. The returned distance is bitwise equal to
/// `distance(metric, x, ys.row(index))`: for `L2` the scan compares
/// squared sums and square-roots the winner, which preserves the argmin
/// because the square root is monotone.
pub fn nearest_point(metric: Metric, x: &[f64], ys: &Matrix) -> (usize, f64) {
    assert!(ys.rows() > 0, "nearest_point on empty set");
    assert_eq!(x.len(), ys.cols());
    let scan = |f: fn(&[f64], &[f64]) -> f64| -> (usize, f64) {
        let mut best = (0usize, f(x, ys.row(0)));
        for j in 1..ys.rows() {
            let d = f(x, ys.row(j));
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    };
    match metric {
        Metric::L1 => scan(|a, b| distance(Metric::L1, a, b)),
        Metric::L2Squared => scan(squared_l2),
        Metric::L2 => {
            let (j, sq) = scan(squared_l2);
            (j, sq.sqrt())
        }
    }
}

/// Mean and unbiased covariance of a sample.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// Fits mean and unbiased covariance (divisor N-1). Needs N >= 2.
pub fn fit_gaussian(points: &Matrix) -> Result<GaussianStats> {
    let (n, d) = (points.rows(), points.cols());
    if n < 2 {
        return Err(Error::InvalidArg(format!(
            "fit_gaussian needs at least 2 points, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(points.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        let r = points.row(i);
        for p in 0..d {
            let cp = r[p] - mean[p];
            for q in p..d {
                let add = cp * (r[q] - mean[q]);
                cov.data[p * d + q] += add;
            }
        }
    }
    let denom = (n - 1) as f64;
    for p in 0..d {
        for q in p..d {
            let v = cov.data[p * d + q] / denom;
            cov.data[p * d + q] = v;
            cov.data[q * d + p] = v;
        }
    }
    Ok(GaussianStats { mean, cov })
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors
/// as columns. Stops when the off-diagonal Frobenius norm falls below
/// 1e-12 relative to the input scale.
pub fn jacobi_eigh(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::DimMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let scale = m.frobenius_norm().max(1.0);
    for p in 0..n {
        for q in (p + 1)..n {
            if (m.get(p, q) - m.get(q, p)).abs() > 1e-6 * scale {
                return Err(Error::InvalidArg(format!(
                    "matrix is not symmetric at ({p},{q})"
                )));
            }
        }
    }
    // Work on the symmetrized copy so tiny asymmetries cannot bias rotations.
    let mut a = Matrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            a.set(p, q, 0.5 * (m.get(p, q) + m.get(q, p)));
        }
    }
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let tol = 1e-12 * scale;
    let mut converged = n < 2;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a.get(p, q) * a.get(p, q);
            }
        }
        if off.sqrt() <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                a.set(p, p, c * c * app - 2.0 * s * c * apq + s * s * aqq);
                a.set(q, q, s * s * app + 2.0 * s * c * apq + c * c * aqq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for i in 0..n {
                    if i != p && i != q {
                        let aip = a.get(i, p);
                        let aiq = a.get(i, q);
                        a.set(i, p, c * aip - s * aiq);
                        a.set(p, i, c * aip - s * aiq);
                        a.set(i, q, s * aip + c * aiq);
                        a.set(q, i, s * aip + c * aiq);
                    }
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let vals: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for i in 0..n {
            vecs.set(i, col, v.get(i, src));
        }
    }
    Ok((vals, vecs))
}

/// Symmetric positive semi-definite square root. Eigenvalues that come
/// out slightly negative from floating point are clamped to zero.
pub fn spd_sqrt(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = jacobi_eigh(m)?;
    let n = vals.len();
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut out = Matrix::zeros(n, n);
    for p in 0..n {
        for q in p..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += roots[k] * vecs.get(p, k) * vecs.get(q, k);
            }
            out.set(p, q, acc);
            out.set(q, p, acc);
        }
    }
    Ok(out)
}

/// All pairwise distances, `out[i][j] = d(a_i, b_j)`.
pub fn pairwise_distances(a: &Matrix, b: &Matrix, metric: Metric) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimMismatch(format!(
            "pairwise_distances: {} vs {} columns",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    let cols = b.rows();
    threads::for_each_row(&mut out.data, cols, |i, row| {
        let x = a.row(i);
        for (j, r) in row.iter_mut().enumerate() {
            *r = distance(metric, x, b.row(j));
        }
    });
    Ok(out)
}

/// Euclidean distance from each point to its k-th nearest neighbour,
/// self excluded. Needs 1 <= k < N.
pub fn knn_radii(points: &Matrix, k: usize) -> Result<Vec<f64>> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::InvalidArg("knn_radii needs k >= 1".into()));
    }
    if k >= n {
        return Err(Error::InvalidArg(format!(
            "knn_radii needs k < number of points, got k={k} with {n} points"
        )));
    }
    let mut radii = vec![0.0; n];
    let mut scratch = Vec::with_capacity(n - 1);
    for i in 0..n {
        scratch.clear();
        let x = points.row(i);
        for j in 0..n {
            if j != i {
                scratch.push(squared_l2(x, points.row(j)));
            }
        }
        let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
        radii[i] = kth.sqrt();
    }
    Ok(radii)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_known_2x2() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn fit_gaussian_pair_on_a_line() {
        let pts = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        let g = fit_gaussian(&pts).unwrap();
        assert_eq!(g.mean, vec![1.0, 0.0]);
        assert_eq!(g.cov.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fit_gaussian_rejects_degenerate_samples() {
        let pts = Matrix::from_rows(&[vec![1.0, 2.0]]);
        assert!(fit_gaussian(&pts).is_err());
        assert!(fit_gaussian(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn spd_sqrt_of_diagonal() {
        let m = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]);
        let s = spd_sqrt(&m).unwrap();
        let want = [2.0, 0.0, 0.0, 3.0];
        for (got, want) in s.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn spd_sqrt_of_coupled_matrix() {
        // Eigenvalues 3 and 1, so the root has entries (sqrt(3)+-1)/2.
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let s = spd_sqrt(&m).unwrap();
        let hi = (3.0f64.sqrt() + 1.0) / 2.0;
        let lo = (3.0f64.sqrt() - 1.0) / 2.0;
        let want = [hi, lo, lo, hi];
        for (got, want) in s.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn spd_sqrt_squares_back() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let n = 8;
            let mut b = Matrix::zeros(n, n);
            for v in b.data_mut() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
            let a = b.transpose().matmul(&b); // SPD by construction
            let s = spd_sqrt(&a).unwrap();
            let back = s.matmul(&s);
            let mut diff = 0.0;
            for (x, y) in back.data().iter().zip(a.data()) {
                diff += (x - y) * (x - y);
            }
            assert!(diff.sqrt() <= 1e-8 * a.frobenius_norm());
        }
    }

    #[test]
    fn spd_sqrt_clamps_negative_eigenvalues() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1e-9]]);
        let s = spd_sqrt(&m).unwrap();
        assert!(s.is_finite());
        assert_eq!(s.get(1, 1), 0.0);
    }

    #[test]
    fn jacobi_recovers_known_eigenvalues() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (vals, vecs) = jacobi_eigh(&m).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        // Columns orthonormal.
        let vtv = vecs.transpose().matmul(&vecs);
        for p in 0..2 {
            for q in 0..2 {
                let want = if p == q { 1.0 } else { 0.0 };
                assert!((vtv.get(p, q) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 16;
        let mut m = Matrix::zeros(n, n);
        for p in 0..n {
            for q in p..n {
                let v = rng.random::<f64>() * 2.0 - 1.0;
                m.set(p, q, v);
                m.set(q, p, v);
            }
        }
        let (vals, vecs) = jacobi_eigh(&m).unwrap();
        // vals sorted descending
        for w in vals.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // V diag(vals) V^T == M
        let mut rec = Matrix::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vals[k] * vecs.get(p, k) * vecs.get(q, k);
                }
                rec.set(p, q, acc);
            }
        }
        let mut diff = 0.0;
        for (x, y) in rec.data().iter().zip(m.data()) {
            diff += (x - y) * (x - y);
        }
        assert!(diff.sqrt() <= 1e-9 * m.frobenius_norm().max(1.0));
    }

    #[test]
    fn jacobi_rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![1.0, 5.0], vec![0.0, 1.0]]);
        assert!(jacobi_eigh(&m).is_err());
    }

    #[test]
    fn pairwise_three_four_five() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0]]);
        let b = Matrix::from_rows(&[vec![3.0, 4.0]]);
        assert_eq!(pairwise_distances(&a, &b, Metric::L2).unwrap().get(0, 0), 5.0);
        assert_eq!(pairwise_distances(&a, &b, Metric::L1).unwrap().get(0, 0), 7.0);
        assert_eq!(
            pairwise_distances(&a, &b, Metric::L2Squared).unwrap().get(0, 0),
            25.0
        );
    }

    #[test]
    fn pairwise_rejects_column_mismatch() {
        let a = Matrix::zeros(1, 2);
        let b = Matrix::zeros(1, 3);
        assert!(pairwise_distances(&a, &b, Metric::L2).is_err());
    }

    #[test]
    fn knn_radii_on_a_line() {
        let pts = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]);
        assert_eq!(knn_radii(&pts, 1).unwrap(), vec![1.0, 1.0, 2.0]);
        assert_eq!(knn_radii(&pts, 2).unwrap(), vec![3.0, 2.0, 3.0]);
    }

    #[test]
    fn knn_radii_rejects_bad_k() {
        let pts = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        assert!(knn_radii(&pts, 0).is_err());
        assert!(knn_radii(&pts, 2).is_err());
    }

    #[test]
    fn nearest_point_breaks_ties_to_lowest_index() {
        let ys = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![5.0, 5.0]]);
        let (idx, d) = nearest_point(Metric::L2, &[0.0, 0.0], &ys);
        assert_eq!(idx, 0);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn nearest_point_value_matches_distance() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut ys = Matrix::zeros(50, 4);
        for v in ys.data_mut() {
            *v = rng.random::<f64>() * 4.0 - 2.0;
        }
        let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
        for metric in [Metric::L1, Metric::L2, Metric::L2Squared] {
            let (j, d) = nearest_point(metric, &x, &ys);
            assert_eq!(d, distance(metric, &x, ys.row(j)), "bitwise for {metric:?}");
        }
    }

    proptest! {
        #[test]
        fn pairwise_self_is_symmetric_with_zero_diagonal(
            pts in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 3), 2..12)
        ) {
            let m = Matrix::from_rows(&pts);
            for metric in [Metric::L1, Metric::L2, Metric::L2Squared] {
                let d = pairwise_distances(&m, &m, metric).unwrap();
                for i in 0..m.rows() {
                    prop_assert_eq!(d.get(i, i), 0.0);
                    for j in 0..m.rows() {
                        prop_assert_eq!(d.get(i, j), d.get(j, i));
                    }
                }
            }
        }

        #[test]
        fn triangle_inequality_holds(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            c in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            for metric in [Metric::L1, Metric::L2] {
                let ab = distance(metric, &a, &b);
                let bc = distance(metric, &b, &c);
                let ac = distance(metric, &a, &c);
                prop_assert!(ac <= ab + bc + 1e-9);
            }
        }

        #[test]
        fn fit_gaussian_covariance_is_psd(
            pts in proptest::collection::vec(
                proptest::collection::vec(-5.0f64..5.0, 2), 2..20)
        ) {
            let g = fit_gaussian(&Matrix::from_rows(&pts)).unwrap();
            let (vals, _) = jacobi_eigh(&g.cov).unwrap();
            for v in vals {
                prop_assert!(v >= -1e-9);
            }
        }
    }
}
