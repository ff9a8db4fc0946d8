//! Generation and restoration metrics: MAE, coverage/density over
//! k-NN balls, a Gaussian Frechet distance on feature embeddings, and
//! mode-coverage diagnostics for finite mixtures.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    distance, fit_gaussian, jacobi_eigh, nearest_point, spd_sqrt, Matrix, Metric,
};

/// Mean absolute error over all N*D entries.
pub fn mae(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::DimMismatch(format!(
            "mae inputs {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = a.data().len();
    if n == 0 {
        return Err(Error::InvalidArg("mae of empty matrices".into()));
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / n as f64)
}

/// Precision/recall-style pair over k-NN balls of the real set, with
/// r_i the distance from x_i to its k-th nearest real neighbor:
///
///   coverage = |{i : some g_j has d(g_j, x_i) <= r_i}| / N
///   density  = sum_j |{i : d(g_j, x_i) <= r_i}| / (k * M)
///
/// Coverage is in [0, 1]; density can exceed 1 when generated points
/// concentrate inside many balls. Distances and radii go through the
/// same Euclidean evaluation, so a point at exactly the k-th-neighbor
/// distance counts as inside.
pub fn coverage_density(real: &Matrix, gen: &Matrix, k: usize) -> Result<(f64, f64)> {
    if real.cols() != gen.cols() {
        return Err(Error::DimMismatch(format!(
            "real width {} vs generated width {}",
            real.cols(),
            gen.cols()
        )));
    }
    if gen.rows() == 0 {
        return Err(Error::InvalidArg("no generated points".into()));
    }
    let radii = crate::numerics::knn_radii(real, k)?;
    let n = real.rows();
    let m = gen.rows();
    let mut covered = vec![false; n];
    let mut ball_hits = 0u64;
    for j in 0..m {
        let g = gen.row(j);
        for i in 0..n {
            if distance(Metric::L2, g, real.row(i)) <= radii[i] {
                covered[i] = true;
                ball_hits += 1;
            }
        }
    }
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / n as f64;
    let density = ball_hits as f64 / (k as f64 * m as f64);
    Ok((coverage, density))
}

/// Frechet distance between Gaussian fits of the two feature sets:
/// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^(1/2)), with the
/// product symmetrized before rooting. Needs at least 2 rows per side.
pub fn fld(real_feats: &Matrix, gen_feats: &Matrix) -> Result<f64> {
    if real_feats.cols() != gen_feats.cols() {
        return Err(Error::DimMismatch(format!(
            "feature widths {} vs {}",
            real_feats.cols(),
            gen_feats.cols()
        )));
    }
    let gr = fit_gaussian(real_feats)?;
    let gg = fit_gaussian(gen_feats)?;
    let d = gr.mean.len();
    let mut mean_sq = 0.0;
    for i in 0..d {
        let diff = gr.mean[i] - gg.mean[i];
        mean_sq += diff * diff;
    }
    let prod = gr.cov.matmul(&gg.cov);
    let mut sym = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            sym.set(i, j, 0.5 * (prod.get(i, j) + prod.get(j, i)));
        }
    }
    let root = spd_sqrt(&sym)?;
    let mut trace = 0.0;
    for i in 0..d {
        trace += gr.cov.get(i, i) + gg.cov.get(i, i) - 2.0 * root.get(i, i);
    }
    Ok(mean_sq + trace)
}

/// Per-mode generation diagnostics for a finite mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeReport {
    /// Nearest-center assignment histogram over all generated points.
    pub hits: Vec<u64>,
    /// Modes with at least one generated point inside their ball.
    pub covered_modes: usize,
    /// Shannon entropy (nats) of the normalized histogram; ln(#modes)
    /// when generation spreads evenly, 0 under total collapse.
    pub collapse_entropy: f64,
}

/// A mode counts as covered when some generated point lies within
/// `radius_multiplier * sigma` of its center (multiplier 3 by
/// convention). The histogram assigns every point to its nearest
/// center regardless of radius.
pub fn mode_coverage(
    gen: &Matrix,
    centers: &Matrix,
    radius_multiplier: f64,
    sigma: f64,
) -> ModeReport {
    assert!(centers.rows() > 0, "mode_coverage needs at least one center");
    assert!(sigma > 0.0, "mode_coverage needs a positive sigma");
    let radius = radius_multiplier * sigma;
    let k = centers.rows();
    let mut hits = vec![0u64; k];
    let mut covered = vec![false; k];
    for j in 0..gen.rows() {
        let g = gen.row(j);
        let (nearest, _) = nearest_point(Metric::L2, g, centers);
        hits[nearest] += 1;
        for c in 0..k {
            if distance(Metric::L2, g, centers.row(c)) <= radius {
                covered[c] = true;
            }
        }
    }
    let m = gen.rows() as f64;
    let mut entropy = 0.0;
    if m > 0.0 {
        for &h in &hits {
            if h > 0 {
                let p = h as f64 / m;
                entropy -= p * p.ln();
            }
        }
    }
    ModeReport {
        hits,
        covered_modes: covered.iter().filter(|&&c| c).count(),
        collapse_entropy: entropy,
    }
}

// ---- feature maps ------------------------------------------------------------

/// PCA cap: principal directions are fit on at most this many rows of
/// the real set.
const PCA_FIT_ROWS: usize = 512;

/// Linear feature map fit on the real set: centering plus projection
/// onto leading principal directions.
pub struct PcaMap {
    pub mean: Vec<f64>,
    /// D x q projection, columns orthonormal.
    pub basis: Matrix,
}

impl PcaMap {
    /// Fits up to `out_dim` components on (a deterministic prefix of)
    /// `real`. Uses whichever of the D x D covariance or the n x n Gram
    /// matrix is smaller.
    pub fn fit(real: &Matrix, out_dim: usize) -> Result<PcaMap> {
        let n_fit = real.rows().min(PCA_FIT_ROWS);
        if n_fit < 2 {
            return Err(Error::InvalidArg(
                "pca needs at least 2 rows to fit".into(),
            ));
        }
        let d = real.cols();
        let mut mean = vec![0.0; d];
        for i in 0..n_fit {
            for (m, v) in mean.iter_mut().zip(real.row(i)) {
                *m += v / n_fit as f64;
            }
        }
        let mut centered = Matrix::zeros(n_fit, d);
        for i in 0..n_fit {
            for j in 0..d {
                centered.set(i, j, real.get(i, j) - mean[j]);
            }
        }
        let q_cap = out_dim.min(d).min(n_fit - 1);
        let basis = if d <= n_fit {
            // Covariance route: eigenvectors of X^T X directly.
            let cov = centered.transpose().matmul(&centered);
            let (vals, vecs) = jacobi_eigh(&cov)?;
            let q = effective_rank(&vals, q_cap);
            let mut basis = Matrix::zeros(d, q);
            for c in 0..q {
                for r in 0..d {
                    basis.set(r, c, vecs.get(r, c));
                }
            }
            basis
        } else {
            // Gram route: X X^T shares nonzero eigenvalues with X^T X;
            // v = X^T u / sqrt(lambda) recovers unit right vectors.
            let gram = centered.matmul_bt(&centered);
            let (vals, vecs) = jacobi_eigh(&gram)?;
            let q = effective_rank(&vals, q_cap);
            let mut basis = Matrix::zeros(d, q);
            for c in 0..q {
                let scale = 1.0 / vals[c].sqrt();
                for r in 0..d {
                    let mut acc = 0.0;
                    for i in 0..n_fit {
                        acc += centered.get(i, r) * vecs.get(i, c);
                    }
                    basis.set(r, c, acc * scale);
                }
            }
            basis
        };
        Ok(PcaMap { mean, basis })
    }

    pub fn out_dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::DimMismatch(format!(
                "pca input width {} vs fitted {}",
                x.cols(),
                self.mean.len()
            )));
        }
        let mut centered = x.clone();
        for i in 0..centered.rows() {
            for (v, m) in centered.row_mut(i).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        Ok(centered.matmul(&self.basis))
    }
}

/// Components kept: eigenvalues above a relative floor, capped at `cap`.
fn effective_rank(vals: &[f64], cap: usize) -> usize {
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    let floor = 1e-9 * top.max(1e-300);
    vals.iter().take(cap).filter(|&&v| v > floor).count()
}

// ---- evaluation report ---------------------------------------------------------

/// Summary of one generated set against one real set. `feature_map`
/// records the embedding behind `fld` (and coverage/density, which use
/// the same space) so numbers from different embeddings are never
/// compared directly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenEvalReport {
    pub fld: f64,
    pub coverage: f64,
    pub density: f64,
    pub n_real: usize,
    pub n_gen: usize,
    pub k: usize,
    pub feature_map: String,
}

/// Feature dimension above which evaluation moves to a PCA embedding.
const PCA_THRESHOLD: usize = 8;
const PCA_TARGET: usize = 64;

/// Evaluates generated points against real ones. Low-dimensional data
/// is scored directly; wider data (images) is first projected to at
/// most 64 principal components fit on the real set, and all three
/// numbers are computed in that space.
pub fn eval_generation(real: &Matrix, gen: &Matrix, k: usize) -> Result<GenEvalReport> {
    let (rf, gf, feature_map) = if real.cols() <= PCA_THRESHOLD {
        (real.clone(), gen.clone(), "identity".to_string())
    } else {
        let map = PcaMap::fit(real, PCA_TARGET)?;
        let rf = map.project(real)?;
        let gf = map.project(gen)?;
        let name = format!("pca{}", map.out_dim());
        (rf, gf, name)
    };
    let fld_v = fld(&rf, &gf)?;
    let (coverage, density) = coverage_density(&rf, &gf, k)?;
    Ok(GenEvalReport {
        fld: fld_v,
        coverage,
        density,
        n_real: real.rows(),
        n_gen: gen.rows(),
        k,
        feature_map,
    })
}

// ---- results table ----------------------------------------------------------

/// Method-by-metric table rendered as CSV (label column first).
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub label: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricsTable {
    pub fn new(label: impl Into<String>, columns: &[&str]) -> Self {
        MetricsTable {
            label: label.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, name: impl Into<String>, values: Vec<f64>) {
        assert_eq!(
            values.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push((name.into(), values));
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.label.clone();
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (name, values) in &self.rows {
            s.push_str(name);
            for v in values {
                s.push(',');
                s.push_str(&format!("{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, d);
        for v in m.data_mut() {
            *v = rng.random::<f64>() * 4.0 - 2.0;
        }
        m
    }

    #[test]
    fn mae_matches_hand_values_and_flat_loop() {
        let a = Matrix::zeros(1, 2);
        let b = Matrix::from_vec(1, 2, vec![3.0, -4.0]);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &b).unwrap(), 3.5);

        let x = random_matrix(7, 5, 1);
        let y = random_matrix(7, 5, 2);
        let mut flat = 0.0;
        for i in 0..7 {
            for j in 0..5 {
                flat += (x.get(i, j) - y.get(i, j)).abs();
            }
        }
        assert!((mae(&x, &y).unwrap() - flat / 35.0).abs() < 1e-15);

        // Joint row permutation leaves it unchanged.
        let perm = [3usize, 1, 4, 0, 6, 2, 5];
        let xp = x.select_rows(&perm);
        let yp = y.select_rows(&perm);
        let (m1, m2) = (mae(&x, &y).unwrap(), mae(&xp, &yp).unwrap());
        assert!((m1 - m2).abs() < 1e-12 * m1.abs(), "{m1} vs {m2}");

        assert!(mae(&a, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn coverage_density_line_example() {
        // Real {0,1,2,3,4} on a line, k=1 (all radii 1), one generated
        // point at 0.5: it lands in the balls of 0 and 1 only, so
        // coverage = 2/5 and density = 2 / (k*M) = 2.
        let real = Matrix::from_vec(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let gen = Matrix::from_vec(1, 1, vec![0.5]);
        let (c, d) = coverage_density(&real, &gen, 1).unwrap();
        assert!((c - 0.4).abs() < 1e-15, "coverage {c}");
        assert!((d - 2.0).abs() < 1e-15, "density {d}");
    }

    #[test]
    fn coverage_density_self_and_far_point() {
        let s = random_matrix(60, 2, 3);
        let (c, d) = coverage_density(&s, &s, 3).unwrap();
        assert_eq!(c, 1.0);
        assert!(d >= 1.0 - 1e-12, "self density {d}");

        let far = Matrix::from_vec(1, 2, vec![1e6, 1e6]);
        let (c, d) = coverage_density(&s, &far, 3).unwrap();
        assert_eq!((c, d), (0.0, 0.0));

        assert!(coverage_density(&s, &s, 60).is_err(), "k >= N");
    }

    #[test]
    fn coverage_density_agrees_with_double_loop_oracle() {
        for seed in 0..4 {
            let real = random_matrix(200, 2, 100 + seed);
            let gen = random_matrix(200, 2, 200 + seed);
            let k = 5;
            let (c, d) = coverage_density(&real, &gen, k).unwrap();

            let radii = crate::numerics::knn_radii(&real, k).unwrap();
            let mut covered = 0;
            let mut hits = 0u64;
            for i in 0..real.rows() {
                let mut any = false;
                for j in 0..gen.rows() {
                    if distance(Metric::L2, gen.row(j), real.row(i)) <= radii[i] {
                        any = true;
                        hits += 1;
                    }
                }
                if any {
                    covered += 1;
                }
            }
            assert_eq!(c, covered as f64 / real.rows() as f64);
            assert_eq!(d, hits as f64 / (k as f64 * gen.rows() as f64));
        }
    }

    /// Four points with sample mean zero and sample covariance s^2 I.
    fn cross(scale: f64, shift: (f64, f64)) -> Matrix {
        // Unbiased covariance of {(a,0),(-a,0),(0,a),(0,-a)} is (2a^2/3) I.
        let a = scale * (1.5f64).sqrt();
        Matrix::from_rows(&[
            vec![shift.0 + a, shift.1],
            vec![shift.0 - a, shift.1],
            vec![shift.0, shift.1 + a],
            vec![shift.0, shift.1 - a],
        ])
    }

    #[test]
    fn fld_matches_closed_forms() {
        let s = random_matrix(40, 3, 9);
        assert!(fld(&s, &s).unwrap().abs() < 1e-6);

        // Equal unit covariances, means (0,0) and (3,0): fld = 9.
        let a = cross(1.0, (0.0, 0.0));
        let b = cross(1.0, (3.0, 0.0));
        assert!((fld(&a, &b).unwrap() - 9.0).abs() < 1e-9);

        // Equal means, covariances 4I and I: Tr(4I + I - 2*2I) = 2.
        let a = cross(2.0, (0.0, 0.0));
        let b = cross(1.0, (0.0, 0.0));
        assert!((fld(&a, &b).unwrap() - 2.0).abs() < 1e-9);

        assert!(fld(&Matrix::zeros(1, 2), &a).is_err(), "N < 2");
    }

    #[test]
    fn fld_is_symmetric_and_rotation_invariant() {
        let a = random_matrix(50, 2, 11);
        let b = random_matrix(70, 2, 12);
        let ab = fld(&a, &b).unwrap();
        assert!((ab - fld(&b, &a).unwrap()).abs() < 1e-9);

        let theta: f64 = 0.73;
        let rot = |m: &Matrix| {
            let mut r = m.clone();
            for i in 0..m.rows() {
                let (x, y) = (m.get(i, 0), m.get(i, 1));
                r.set(i, 0, theta.cos() * x - theta.sin() * y);
                r.set(i, 1, theta.sin() * x + theta.cos() * y);
            }
            r
        };
        let rotated = fld(&rot(&a), &rot(&b)).unwrap();
        assert!((ab - rotated).abs() < 1e-6, "{ab} vs {rotated}");
    }

    #[test]
    fn mode_coverage_examples() {
        let centers = crate::datasets::gen_eight_gaussians(1, 0.1, 0)
            .mode_centers
            .unwrap();

        let all = mode_coverage(&centers, &centers, 3.0, 0.1);
        assert_eq!(all.covered_modes, 8);
        assert!((all.collapse_entropy - (8f64).ln()).abs() < 1e-12);
        assert_eq!(all.hits, vec![1; 8]);

        let one = centers.select_rows(&[2, 2, 2, 2]);
        let collapsed = mode_coverage(&one, &centers, 3.0, 0.1);
        assert_eq!(collapsed.covered_modes, 1);
        assert_eq!(collapsed.collapse_entropy, 0.0);

        // First 7 centers duplicated evenly.
        let seven = centers.select_rows(&[0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4, 5, 6]);
        let r = mode_coverage(&seven, &centers, 3.0, 0.1);
        assert_eq!(r.covered_modes, 7);
        assert!((r.collapse_entropy - (7f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn pca_recovers_a_planted_plane() {
        // Points on a 2D plane embedded in 7D; PCA-2 must preserve
        // pairwise distances.
        let flat = random_matrix(30, 2, 21);
        let mut basis = Matrix::zeros(2, 7);
        basis.set(0, 1, 0.6);
        basis.set(0, 4, 0.8);
        basis.set(1, 0, 1.0);
        let mut hi = flat.matmul(&basis);
        for (i, v) in hi.data_mut().iter_mut().enumerate() {
            *v += (i % 7) as f64; // constant per-column offset
        }
        let map = PcaMap::fit(&hi, 64).unwrap();
        assert_eq!(map.out_dim(), 2, "plane has rank 2");
        let proj = map.project(&hi).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = distance(Metric::L2, flat.row(i), flat.row(j));
                let got = distance(Metric::L2, proj.row(i), proj.row(j));
                assert!((want - got).abs() < 1e-9, "({i},{j}): {want} vs {got}");
            }
        }
    }

    #[test]
    fn pca_gram_route_matches_covariance_route() {
        // 9 rows in 20 columns forces the Gram route; projecting the
        // fit data must give the same Frechet distance as identity
        // features computed in the low-rank subspace.
        let flat = random_matrix(9, 3, 22);
        let mut lift = Matrix::zeros(3, 20);
        for c in 0..3 {
            lift.set(c, 2 * c + 1, 1.0);
        }
        let hi = flat.matmul(&lift);
        let map = PcaMap::fit(&hi, 64).unwrap();
        assert_eq!(map.out_dim(), 3);
        let proj = map.project(&hi).unwrap();
        // Orthonormal columns: distances preserved.
        for i in 0..hi.rows() {
            for j in 0..hi.rows() {
                let want = distance(Metric::L2, hi.row(i), hi.row(j));
                let got = distance(Metric::L2, proj.row(i), proj.row(j));
                assert!((want - got).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eval_generation_picks_feature_map_by_width() {
        let real = random_matrix(64, 2, 31);
        let gen = random_matrix(64, 2, 32);
        let r = eval_generation(&real, &gen, 5).unwrap();
        assert_eq!(r.feature_map, "identity");
        assert!(r.coverage >= 0.0 && r.coverage <= 1.0);
        assert!(r.fld >= -1e-9);

        let real = random_matrix(64, 25, 33);
        let gen = random_matrix(64, 25, 34);
        let r = eval_generation(&real, &gen, 5).unwrap();
        assert!(r.feature_map.starts_with("pca"), "{}", r.feature_map);
        assert_eq!(r.n_real, 64);

        // Identical sets score perfectly whichever embedding is used.
        let r = eval_generation(&real, &real, 5).unwrap();
        assert!(r.fld.abs() < 1e-6);
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn metrics_table_renders_csv() {
        let mut t = MetricsTable::new("method", &["fld", "coverage", "density"]);
        t.push_row("naign", vec![0.5, 0.9, 1.1]);
        t.push_row("ign", vec![1.25, 0.8, 0.75]);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,fld,coverage,density");
        assert_eq!(lines[1], "naign,0.5,0.9,1.1");
        assert_eq!(lines[2], "ign,1.25,0.8,0.75");
    }
}
