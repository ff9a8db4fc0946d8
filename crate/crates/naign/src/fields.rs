//! Scalar fields derived from a trained map: per-point drift
//! d(z, f(z)), manifold-distance oracles, the exponential energy
//! E = e^(k*delta) - 1 with its unnormalized density exp(-E), grid
//! evaluation, projection maps, and CSV/SVG export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::net::{forward, MlpParams};
use crate::numerics::{distance, nearest_point, Matrix, Metric};

/// Per-row distance between `points` and `f(points)` for an arbitrary
/// map.
pub fn drift_map(f: impl Fn(&Matrix) -> Matrix, points: &Matrix, metric: Metric) -> Vec<f64> {
    let mapped = f(points);
    (0..points.rows())
        .map(|i| distance(metric, points.row(i), mapped.row(i)))
        .collect()
}

/// Drift of the model: d(z, f_theta(z)) per row.
pub fn drift(params: &MlpParams, points: &Matrix, metric: Metric) -> Result<Vec<f64>> {
    if points.cols() != params.arch.dim {
        return Err(Error::DimMismatch(format!(
            "points width {} vs model dim {}",
            points.cols(),
            params.arch.dim
        )));
    }
    Ok(drift_map(|b| forward(params, b), points, metric))
}

// ---- manifold distance -------------------------------------------------------

/// What stands in for the data manifold when measuring distances.
#[derive(Debug, Clone)]
pub enum ManifoldSpec {
    /// Nearest dataset point (empirical manifold).
    Points(Matrix),
    /// The two unit half-circle arcs of the moons construction.
    TwoMoonsArcs,
    /// Nearest of the given mixture centers (noiseless mixtures).
    Centers(Matrix),
}

impl ManifoldSpec {
    /// Analytic manifold for noiseless synthetic data, empirical
    /// otherwise.
    pub fn for_dataset(ds: &Dataset) -> ManifoldSpec {
        if ds.noise_sigma == 0.0 && ds.name == "2moons" {
            return ManifoldSpec::TwoMoonsArcs;
        }
        if ds.noise_sigma == 0.0 {
            if let Some(centers) = &ds.mode_centers {
                return ManifoldSpec::Centers(centers.clone());
            }
        }
        ManifoldSpec::Points(ds.points.clone())
    }

    /// Exact minimum Euclidean distance from each query to the
    /// manifold proxy.
    pub fn distances(&self, points: &Matrix) -> Result<Vec<f64>> {
        match self {
            ManifoldSpec::Points(data) | ManifoldSpec::Centers(data) => {
                if data.rows() == 0 {
                    return Err(Error::InvalidArg("empty manifold point set".into()));
                }
                if data.cols() != points.cols() {
                    return Err(Error::DimMismatch(format!(
                        "query width {} vs manifold width {}",
                        points.cols(),
                        data.cols()
                    )));
                }
                Ok((0..points.rows())
                    .map(|i| nearest_point(Metric::L2, points.row(i), data).1)
                    .collect())
            }
            ManifoldSpec::TwoMoonsArcs => {
                if points.cols() != 2 {
                    return Err(Error::DimMismatch(format!(
                        "moon arcs are 2-dimensional, queries have width {}",
                        points.cols()
                    )));
                }
                Ok((0..points.rows())
                    .map(|i| {
                        let p = points.row(i);
                        two_moons_arc_distance(p[0], p[1])
                    })
                    .collect())
            }
        }
    }
}

/// Distance from (x, y) to the closer of the two arcs: the upper unit
/// half-circle at the origin (angles [0, pi]) and the lower one at
/// (1, -0.5) (angles [pi, 2pi]).
fn two_moons_arc_distance(x: f64, y: f64) -> f64 {
    let upper = arc_distance(x, y, 0.0, 0.0, true);
    let lower = arc_distance(x, y, 1.0, -0.5, false);
    upper.min(lower)
}

/// Distance to a unit half-circle centered at (cx, cy); `top` selects
/// the y >= cy half. Radial projection when the angle lands on the
/// arc, else the nearest endpoint.
fn arc_distance(x: f64, y: f64, cx: f64, cy: f64, top: bool) -> f64 {
    let (dx, dy) = (x - cx, y - cy);
    let on_half = if top { dy >= 0.0 } else { dy <= 0.0 };
    if on_half {
        ((dx * dx + dy * dy).sqrt() - 1.0).abs()
    } else {
        let e1 = ((dx - 1.0) * (dx - 1.0) + dy * dy).sqrt();
        let e2 = ((dx + 1.0) * (dx + 1.0) + dy * dy).sqrt();
        e1.min(e2)
    }
}

/// Shortest distance from each query to any dataset point (brute
/// force, exact).
pub fn manifold_distance_oracle(points: &Matrix, dataset: &Dataset) -> Result<Vec<f64>> {
    ManifoldSpec::Points(dataset.points.clone()).distances(points)
}

// ---- energy / density ----------------------------------------------------------

/// Elementwise e^(k*delta) - 1. Zero drift gives exactly zero energy.
pub fn energy(drift_values: &[f64], k: f64) -> Result<Vec<f64>> {
    if !(k > 0.0) {
        return Err(Error::InvalidArg(format!(
            "energy growth rate k must be positive, got {k}"
        )));
    }
    Ok(drift_values.iter().map(|&d| (k * d).exp_m1()).collect())
}

/// Elementwise exp(-E), clamped below to the smallest positive normal
/// so the result stays in (0, 1]. Equals 1 exactly where E = 0.
pub fn unnorm_density(energy_values: &[f64]) -> Vec<f64> {
    energy_values
        .iter()
        .map(|&e| (-e).exp().max(f64::MIN_POSITIVE))
        .collect()
}

// ---- grids ---------------------------------------------------------------------

/// Which scalar the grid holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// d(z, f(z)) of a model.
    Drift,
    /// d_M to a manifold proxy.
    Distance,
    /// e^(k*base) - 1.
    Energy,
    /// exp(-energy), in (0, 1].
    Density,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Drift => "drift",
            FieldKind::Distance => "distance",
            FieldKind::Energy => "energy",
            FieldKind::Density => "density",
        }
    }
}

impl std::str::FromStr for FieldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<FieldKind> {
        match s {
            "drift" => Ok(FieldKind::Drift),
            "distance" => Ok(FieldKind::Distance),
            "energy" => Ok(FieldKind::Energy),
            "density" => Ok(FieldKind::Density),
            other => Err(Error::InvalidArg(format!(
                "unknown field kind {other:?}, expected drift, distance, energy or density"
            ))),
        }
    }
}

/// A scalar field sampled at the cell centers of a regular 2D grid.
/// `values[iy * nx + ix]` belongs to center (x_ix, y_iy) with y
/// increasing along iy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldGrid {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub nx: usize,
    pub ny: usize,
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn x_center(&self, ix: usize) -> f64 {
        self.xmin + (ix as f64 + 0.5) * (self.xmax - self.xmin) / self.nx as f64
    }

    pub fn y_center(&self, iy: usize) -> f64 {
        self.ymin + (iy as f64 + 0.5) * (self.ymax - self.ymin) / self.ny as f64
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// CSV `x,y,value`, one row per cell, y-major then x.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("x,y,value\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                s.push_str(&format!(
                    "{},{},{}\n",
                    self.x_center(ix),
                    self.y_center(iy),
                    self.get(ix, iy)
                ));
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

fn validate_bbox(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<()> {
    let all_finite = [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite());
    if !all_finite || xmin >= xmax || ymin >= ymax {
        return Err(Error::InvalidArg(format!(
            "invalid bbox [{xmin}, {xmax}] x [{ymin}, {ymax}]"
        )));
    }
    Ok(())
}

/// Cell centers of the grid, row-major with y outermost (matches
/// [`FieldGrid::values`]).
pub fn grid_points(
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    nx: usize,
    ny: usize,
) -> Result<Matrix> {
    validate_bbox(xmin, xmax, ymin, ymax)?;
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArg(format!(
            "grid resolution must be at least 2x2, got {nx}x{ny}"
        )));
    }
    let mut pts = Matrix::zeros(nx * ny, 2);
    for iy in 0..ny {
        let y = ymin + (iy as f64 + 0.5) * (ymax - ymin) / ny as f64;
        for ix in 0..nx {
            let x = xmin + (ix as f64 + 0.5) * (xmax - xmin) / nx as f64;
            let row = pts.row_mut(iy * nx + ix);
            row[0] = x;
            row[1] = y;
        }
    }
    Ok(pts)
}

/// Where the base scalar of a grid comes from: a model's drift or a
/// manifold's distance field.
pub enum FieldSource<'a> {
    Model(&'a MlpParams),
    Manifold(&'a ManifoldSpec),
}

/// Evaluates `kind` at the cell centers of an nx-by-ny grid over the
/// bbox. The base scalar (drift or distance, depending on the source)
/// feeds the energy/density transforms; `k` is the energy growth rate.
pub fn grid_eval(
    source: &FieldSource,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    nx: usize,
    ny: usize,
    kind: FieldKind,
    metric: Metric,
    k: f64,
) -> Result<FieldGrid> {
    let pts = grid_points(xmin, xmax, ymin, ymax, nx, ny)?;
    let base = match source {
        FieldSource::Model(params) => {
            if params.arch.dim != 2 {
                return Err(Error::InvalidArg(format!(
                    "grid evaluation needs a 2-dimensional model, got dim {}",
                    params.arch.dim
                )));
            }
            drift(params, &pts, metric)?
        }
        FieldSource::Manifold(spec) => spec.distances(&pts)?,
    };
    let values = match kind {
        FieldKind::Drift | FieldKind::Distance => base,
        FieldKind::Energy => energy(&base, k)?,
        FieldKind::Density => unnorm_density(&energy(&base, k)?),
    };
    Ok(FieldGrid {
        xmin,
        xmax,
        ymin,
        ymax,
        nx,
        ny,
        kind,
        values,
    })
}

// ---- projection maps -----------------------------------------------------------

/// Where a set of source points lands under the map, with displacement
/// norms (equal to the drift at each source).
#[derive(Debug, Clone)]
pub struct ProjectionMap {
    pub sources: Matrix,
    pub targets: Matrix,
    pub norms: Vec<f64>,
}

/// Projection of `sources` through an arbitrary map.
pub fn projection_map_of(
    f: impl Fn(&Matrix) -> Matrix,
    sources: &Matrix,
    metric: Metric,
) -> ProjectionMap {
    let targets = f(sources);
    let norms = (0..sources.rows())
        .map(|i| distance(metric, sources.row(i), targets.row(i)))
        .collect();
    ProjectionMap {
        sources: sources.clone(),
        targets,
        norms,
    }
}

/// Projection of `sources` through the model. The model must be 2D
/// (this is a plotting structure).
pub fn projection_map(
    params: &MlpParams,
    sources: &Matrix,
    metric: Metric,
) -> Result<ProjectionMap> {
    if params.arch.dim != 2 {
        return Err(Error::InvalidArg(format!(
            "projection maps need a 2-dimensional model, got dim {}",
            params.arch.dim
        )));
    }
    if sources.cols() != 2 {
        return Err(Error::DimMismatch(format!(
            "sources must have width 2, got {}",
            sources.cols()
        )));
    }
    Ok(projection_map_of(|b| forward(params, b), sources, metric))
}

impl ProjectionMap {
    /// CSV `sx,sy,tx,ty,norm`, one row per source.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("sx,sy,tx,ty,norm\n");
        for i in 0..self.sources.rows() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                self.sources.get(i, 0),
                self.sources.get(i, 1),
                self.targets.get(i, 0),
                self.targets.get(i, 1),
                self.norms[i]
            ));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

// ---- SVG rendering ---------------------------------------------------------------

const VIRIDIS: [(u8, u8, u8); 9] = [
    (68, 1, 84),
    (71, 44, 122),
    (59, 81, 139),
    (44, 113, 142),
    (33, 144, 141),
    (39, 173, 129),
    (92, 200, 99),
    (170, 220, 50),
    (253, 231, 37),
];

fn viridis(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let scaled = t * (VIRIDIS.len() - 1) as f64;
    let i = (scaled.floor() as usize).min(VIRIDIS.len() - 2);
    let frac = scaled - i as f64;
    let (r0, g0, b0) = VIRIDIS[i];
    let (r1, g1, b1) = VIRIDIS[i + 1];
    let lerp = |a: u8, b: u8| (a as f64 + frac * (b as f64 - a as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(r0, r1), lerp(g0, g1), lerp(b0, b1))
}

const PLOT: f64 = 520.0;
const MARGIN: f64 = 40.0;
const LEGEND_W: f64 = 24.0;
const LEGEND_STEPS: usize = 32;

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    )
}

/// Heatmap of the grid with a vertical legend annotated with the value
/// range. Output is valid SVG 1.1 and byte-deterministic in the input.
pub fn render_field_svg(grid: &FieldGrid, path: &Path) -> Result<()> {
    let (lo, hi) = grid.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let width = MARGIN * 2.0 + PLOT + 90.0 + LEGEND_W;
    let height = MARGIN * 2.0 + PLOT;
    let mut s = svg_open(width, height);
    s.push_str(&format!(
        "<title>{} field, {}x{} grid</title>\n",
        grid.kind.name(),
        grid.nx,
        grid.ny
    ));
    let cw = PLOT / grid.nx as f64;
    let ch = PLOT / grid.ny as f64;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let v = grid.get(ix, iy);
            let t = (v - lo) / span;
            let x = MARGIN + ix as f64 * cw;
            // y axis points up: the top row is the largest iy.
            let y = MARGIN + (grid.ny - 1 - iy) as f64 * ch;
            s.push_str(&format!(
                "<rect class=\"cell\" x=\"{x:.3}\" y=\"{y:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{}\"/>\n",
                cw + 0.5,
                ch + 0.5,
                viridis(t)
            ));
        }
    }
    // Legend: a stack of colored steps from min (bottom) to max (top).
    let lx = MARGIN + PLOT + 20.0;
    let step_h = PLOT / LEGEND_STEPS as f64;
    for i in 0..LEGEND_STEPS {
        let t = (i as f64 + 0.5) / LEGEND_STEPS as f64;
        let y = MARGIN + PLOT - (i as f64 + 1.0) * step_h;
        s.push_str(&format!(
            "<rect class=\"legend\" x=\"{lx:.3}\" y=\"{y:.3}\" width=\"{LEGEND_W}\" height=\"{:.3}\" fill=\"{}\"/>\n",
            step_h + 0.5,
            viridis(t)
        ));
    }
    let tx = lx + LEGEND_W + 6.0;
    s.push_str(&format!(
        "<text x=\"{tx:.3}\" y=\"{:.3}\" font-family=\"monospace\" font-size=\"12\">max {hi:.6}</text>\n",
        MARGIN + 10.0
    ));
    s.push_str(&format!(
        "<text x=\"{tx:.3}\" y=\"{:.3}\" font-family=\"monospace\" font-size=\"12\">min {lo:.6}</text>\n",
        MARGIN + PLOT
    ));
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Sources as dots, displacements as arrows toward the mapped targets.
/// Byte-deterministic in the input.
pub fn render_projection_svg(map: &ProjectionMap, path: &Path) -> Result<()> {
    // Fit both point sets with 5% padding.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for m in [&map.sources, &map.targets] {
        for i in 0..m.rows() {
            for c in 0..2 {
                lo[c] = lo[c].min(m.get(i, c));
                hi[c] = hi[c].max(m.get(i, c));
            }
        }
    }
    for c in 0..2 {
        let pad = 0.05 * (hi[c] - lo[c]).max(1e-9);
        lo[c] -= pad;
        hi[c] += pad;
    }
    let sx = PLOT / (hi[0] - lo[0]);
    let sy = PLOT / (hi[1] - lo[1]);
    let px = |x: f64| MARGIN + (x - lo[0]) * sx;
    let py = |y: f64| MARGIN + PLOT - (y - lo[1]) * sy;

    let side = MARGIN * 2.0 + PLOT;
    let mut s = svg_open(side, side);
    s.push_str(&format!(
        "<title>projection map, {} points</title>\n",
        map.sources.rows()
    ));
    s.push_str("<defs><marker id=\"ah\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"#2ca02c\"/></marker></defs>\n");
    for i in 0..map.sources.rows() {
        let (x1, y1) = (px(map.sources.get(i, 0)), py(map.sources.get(i, 1)));
        let (x2, y2) = (px(map.targets.get(i, 0)), py(map.targets.get(i, 1)));
        if map.norms[i] > 0.0 {
            s.push_str(&format!(
                "<line class=\"arrow\" x1=\"{x1:.3}\" y1=\"{y1:.3}\" x2=\"{x2:.3}\" y2=\"{y2:.3}\" stroke=\"#2ca02c\" stroke-width=\"1\" marker-end=\"url(#ah)\"/>\n"
            ));
        }
        s.push_str(&format!(
            "<circle class=\"source\" cx=\"{x1:.3}\" cy=\"{y1:.3}\" r=\"2.2\" fill=\"#d62728\"/>\n"
        ));
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_mlp, MlpArch};

    fn circle_projector(b: &Matrix) -> Matrix {
        let mut out = b.clone();
        for i in 0..out.rows() {
            let r = out.row_mut(i);
            let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
            if n > 0.0 {
                r[0] /= n;
                r[1] /= n;
            }
        }
        out
    }

    #[test]
    fn drift_of_reference_maps() {
        let pts = Matrix::from_rows(&[vec![3.0, 4.0], vec![2.0, 0.0]]);
        let id = drift_map(|b| b.clone(), &pts, Metric::L2);
        assert_eq!(id, vec![0.0, 0.0]);
        let zero = drift_map(|b| Matrix::zeros(b.rows(), b.cols()), &pts, Metric::L2);
        assert_eq!(zero[0], 5.0);
        let circ = drift_map(circle_projector, &pts, Metric::L2);
        assert!((circ[1] - 1.0).abs() < 1e-12, "at (2,0): {}", circ[1]);

        // A residual net with zero parameters is the identity.
        let mut arch = MlpArch::new(2, vec![4]);
        arch.residual_output = true;
        let mut p = init_mlp(&arch, 0);
        for w in p.weights.iter_mut() {
            w.fill(0.0);
        }
        assert_eq!(drift(&p, &pts, Metric::L2).unwrap(), vec![0.0, 0.0]);
        assert!(drift(&p, &Matrix::zeros(1, 3), Metric::L2).is_err());
    }

    #[test]
    fn empirical_manifold_distance_is_exact_brute_force() {
        let ds = crate::datasets::gen_grids(40, 0.05, 5);
        let q = ds.points.select_rows(&[3]);
        let d = manifold_distance_oracle(&q, &ds).unwrap();
        assert_eq!(d[0], 0.0, "dataset point is on the manifold");

        let single = Dataset {
            name: "one".into(),
            points: Matrix::from_vec(1, 2, vec![0.0, 0.0]),
            mode_centers: None,
            noise_sigma: 0.0,
        };
        let d = manifold_distance_oracle(&Matrix::from_vec(1, 2, vec![3.0, 4.0]), &single).unwrap();
        assert_eq!(d[0], 5.0);

        let empty = Dataset {
            name: "none".into(),
            points: Matrix::zeros(0, 2),
            mode_centers: None,
            noise_sigma: 0.0,
        };
        assert!(manifold_distance_oracle(&q, &empty).is_err());
    }

    #[test]
    fn analytic_moon_arcs_match_dense_sampling() {
        // 100k points along both arcs as the reference.
        let n = 50_000;
        let mut arc_pts = Matrix::zeros(2 * n, 2);
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let a = t * std::f64::consts::PI;
            let r = arc_pts.row_mut(i);
            r[0] = a.cos();
            r[1] = a.sin();
            let a = std::f64::consts::PI + t * std::f64::consts::PI;
            let r = arc_pts.row_mut(n + i);
            r[0] = 1.0 + a.cos();
            r[1] = -0.5 + a.sin();
        }
        let spec = ManifoldSpec::Points(arc_pts);

        let queries = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.5, 0.5],
            vec![2.0, 0.0],
            vec![-1.5, -1.0],
            vec![1.0, -0.5],
            vec![0.5, -0.25],
            vec![3.0, 2.0],
            vec![-0.2, 1.4],
            vec![1.7, -1.3],
            vec![0.0, -2.0],
        ]);
        let dense = spec.distances(&queries).unwrap();
        let analytic = ManifoldSpec::TwoMoonsArcs.distances(&queries).unwrap();
        for (i, (d, a)) in dense.iter().zip(&analytic).enumerate() {
            assert!((d - a).abs() < 1e-3, "query {i}: dense {d} vs analytic {a}");
            // Sampled arcs can only overestimate the true distance.
            assert!(*a <= d + 1e-12, "analytic exceeds the sampled upper bound");
        }
    }

    #[test]
    fn noiseless_dataset_selects_analytic_manifold() {
        let moons = crate::datasets::gen_two_moons(10, 0.0, 1);
        assert!(matches!(
            ManifoldSpec::for_dataset(&moons),
            ManifoldSpec::TwoMoonsArcs
        ));
        let noisy = crate::datasets::gen_two_moons(10, 0.1, 1);
        assert!(matches!(
            ManifoldSpec::for_dataset(&noisy),
            ManifoldSpec::Points(_)
        ));
        let gauss = crate::datasets::gen_eight_gaussians(10, 0.0, 1);
        match ManifoldSpec::for_dataset(&gauss) {
            ManifoldSpec::Centers(c) => assert_eq!(c.rows(), 8),
            other => panic!("wanted centers, got {other:?}"),
        }
    }

    #[test]
    fn energy_and_density_formulas() {
        assert!(energy(&[1.0], 0.0).is_err());
        assert!(energy(&[1.0], -1.0).is_err());
        let e = energy(&[0.0, 1.0, 2.0], 2.0).unwrap();
        assert_eq!(e[0], 0.0);
        assert!((e[1] - (2f64.exp() - 1.0)).abs() < 1e-12);
        assert!(e[1] < e[2], "monotone in drift");

        let d = unnorm_density(&[0.0, std::f64::consts::LN_2, 1e9]);
        assert_eq!(d[0], 1.0);
        assert!((d[1] - 0.5).abs() < 1e-15);
        assert!(d[2] > 0.0, "density never reaches zero");
        assert!(d.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(d[0] > d[1] && d[1] > d[2], "strictly decreasing in energy");
    }

    #[test]
    fn grid_centers_are_exact() {
        let pts = grid_points(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        assert_eq!(pts.row(0), &[0.25, 0.25]);
        assert_eq!(pts.row(1), &[0.75, 0.25]);
        assert_eq!(pts.row(2), &[0.25, 0.75]);
        assert_eq!(pts.row(3), &[0.75, 0.75]);
        assert!(grid_points(1.0, 0.0, 0.0, 1.0, 2, 2).is_err(), "inverted bbox");
        assert!(grid_points(0.0, 1.0, 0.0, 1.0, 1, 2).is_err(), "1-wide grid");
    }

    #[test]
    fn one_point_distance_field_is_radially_symmetric() {
        let spec = ManifoldSpec::Points(Matrix::from_vec(1, 2, vec![0.0, 0.0]));
        let g = grid_eval(
            &FieldSource::Manifold(&spec),
            -1.0,
            1.0,
            -1.0,
            1.0,
            4,
            4,
            FieldKind::Distance,
            Metric::L2,
            2.0,
        )
        .unwrap();
        for iy in 0..4 {
            for ix in 0..4 {
                let v = g.get(ix, iy);
                assert!((v - g.get(3 - ix, iy)).abs() < 1e-9, "x mirror");
                assert!((v - g.get(ix, 3 - iy)).abs() < 1e-9, "y mirror");
                assert!((v - g.get(iy, ix)).abs() < 1e-9, "diagonal");
            }
        }
    }

    #[test]
    fn density_grid_is_the_composition_of_its_stages() {
        let ds = crate::datasets::gen_eight_gaussians(50, 0.1, 9);
        let spec = ManifoldSpec::Points(ds.points.clone());
        let g = grid_eval(
            &FieldSource::Manifold(&spec),
            -3.0,
            3.0,
            -3.0,
            3.0,
            8,
            8,
            FieldKind::Density,
            Metric::L2,
            2.0,
        )
        .unwrap();
        let pts = grid_points(-3.0, 3.0, -3.0, 3.0, 8, 8).unwrap();
        let manual = unnorm_density(&energy(&spec.distances(&pts).unwrap(), 2.0).unwrap());
        assert_eq!(g.values, manual, "composition must be bitwise identical");
        assert!(g.values.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn projection_map_matches_drift_and_projects_rays_onto_circle() {
        // Radial rays through the circle projector land on the unit circle.
        let mut rays = Matrix::zeros(12, 2);
        for i in 0..12 {
            let ang = i as f64 * std::f64::consts::TAU / 12.0;
            let r = 0.5 + 0.25 * i as f64;
            let row = rays.row_mut(i);
            row[0] = r * ang.cos();
            row[1] = r * ang.sin();
        }
        let pm = projection_map_of(circle_projector, &rays, Metric::L2);
        for i in 0..12 {
            let n = (pm.targets.get(i, 0).powi(2) + pm.targets.get(i, 1).powi(2)).sqrt();
            assert!((n - 1.0).abs() < 1e-9, "target {i} radius {n}");
        }
        let d = drift_map(circle_projector, &rays, Metric::L2);
        assert_eq!(pm.norms, d, "norms are the drift, same code path");

        // Identity model: zero displacements.
        let mut arch = MlpArch::new(2, vec![4]);
        arch.residual_output = true;
        let mut p = init_mlp(&arch, 0);
        for w in p.weights.iter_mut() {
            w.fill(0.0);
        }
        let pm = projection_map(&p, &rays, Metric::L2).unwrap();
        assert!(pm.norms.iter().all(|&n| n == 0.0));

        let p3 = init_mlp(&MlpArch::new(3, vec![4]), 0);
        assert!(projection_map(&p3, &rays, Metric::L2).is_err(), "non-2D model");
    }

    #[test]
    fn svg_rendering_is_deterministic_and_annotated() {
        let dir = tempfile::tempdir().unwrap();
        let g = FieldGrid {
            xmin: 0.0,
            xmax: 1.0,
            ymin: 0.0,
            ymax: 1.0,
            nx: 2,
            ny: 2,
            kind: FieldKind::Drift,
            values: vec![0.0; 4],
        };
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        render_field_svg(&g, &p1).unwrap();
        render_field_svg(&g, &p2).unwrap();
        let s1 = std::fs::read_to_string(&p1).unwrap();
        assert_eq!(s1, std::fs::read_to_string(&p2).unwrap());
        assert!(s1.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\""));
        // 4 identical cell fills for an all-zero grid.
        let fills: Vec<&str> = s1
            .lines()
            .filter(|l| l.contains("class=\"cell\""))
            .collect();
        assert_eq!(fills.len(), 4);
        let first_fill = fills[0].split("fill=").nth(1).unwrap();
        assert!(fills.iter().all(|l| l.ends_with(first_fill)));
        assert!(s1.contains("min 0.000000") && s1.contains("max 0.000000"));

        // Annotated range follows the values.
        let g2 = FieldGrid {
            values: vec![0.25, 0.5, 0.75, 1.5],
            ..g
        };
        let p3 = dir.path().join("c.svg");
        render_field_svg(&g2, &p3).unwrap();
        let s3 = std::fs::read_to_string(&p3).unwrap();
        assert!(s3.contains("min 0.250000") && s3.contains("max 1.500000"));

        let pm = projection_map_of(circle_projector, &Matrix::from_rows(&[vec![2.0, 0.0]]), Metric::L2);
        let p4 = dir.path().join("d.svg");
        render_projection_svg(&pm, &p4).unwrap();
        let s4 = std::fs::read_to_string(&p4).unwrap();
        assert!(s4.contains("class=\"source\"") && s4.contains("class=\"arrow\""));
        assert!(s4.contains("marker-end=\"url(#ah)\""));
    }

    #[test]
    fn field_csv_round_trips_values() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ManifoldSpec::Points(Matrix::from_vec(1, 2, vec![0.5, 0.5]));
        let g = grid_eval(
            &FieldSource::Manifold(&spec),
            0.0,
            1.0,
            0.0,
            1.0,
            3,
            2,
            FieldKind::Distance,
            Metric::L2,
            2.0,
        )
        .unwrap();
        let p = dir.path().join("g.csv");
        g.save_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,value");
        assert_eq!(lines.len(), 1 + 6);
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], g.x_center(0));
        assert_eq!(first[1], g.y_center(0));
        assert_eq!(first[2], g.get(0, 0));

        let pm = projection_map_of(|b| b.clone(), &Matrix::from_rows(&[vec![1.0, 2.0]]), Metric::L2);
        let p = dir.path().join("pm.csv");
        pm.save_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "sx,sy,tx,ty,norm\n1,2,1,2,0\n");
    }
}
