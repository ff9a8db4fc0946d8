//! Data sources: synthetic 2D mixtures, IDX image files, degradations
//! for restoration experiments, and prior samplers.
//!
//! Image rows hold square images flattened row-major with pixel values
//! in [-1, 1]. All generators and degradations are bit-deterministic in
//! their seed.

use std::io::Read;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A point cloud plus the metadata evaluation needs: mixture centers
/// when the source is a finite mixture, and the noise level used.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub points: Matrix,
    /// Present for finite-mixture sources (mode coverage reports).
    pub mode_centers: Option<Matrix>,
    pub noise_sigma: f64,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

// ---- synthetic generators ------------------------------------------------

pub(crate) fn sample_two_moons(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::zeros(n, 2);
    for i in 0..n {
        let t: f64 = rng.random::<f64>();
        let (cx, cy, a0) = if i % 2 == 0 {
            // Upper moon: unit arc centered at the origin, angles [0, pi].
            (0.0, 0.0, 0.0)
        } else {
            // Lower moon: unit arc centered at (1, -0.5), angles [pi, 2pi].
            (1.0, -0.5, std::f64::consts::PI)
        };
        let ang = a0 + t * std::f64::consts::PI;
        let row = m.row_mut(i);
        row[0] = cx + ang.cos() + noise * standard_normal(rng);
        row[1] = cy + ang.sin() + noise * standard_normal(rng);
    }
    m
}

/// Two interleaved unit half-circles; the lower one is offset by
/// (1, -0.5). Even indices come from the upper moon, odd from the lower,
/// so both carry the same weight.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset {
        name: "2moons".into(),
        points: sample_two_moons(n, noise, &mut rng),
        mode_centers: None,
        noise_sigma: noise,
    }
}

pub(crate) fn eight_gaussian_centers() -> Matrix {
    let mut c = Matrix::zeros(8, 2);
    for k in 0..8 {
        let ang = k as f64 * std::f64::consts::FRAC_PI_4;
        c.set(k, 0, 2.0 * ang.cos());
        c.set(k, 1, 2.0 * ang.sin());
    }
    c
}

pub(crate) fn sample_eight_gaussians(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let centers = eight_gaussian_centers();
    let mut m = Matrix::zeros(n, 2);
    for i in 0..n {
        let k = (rng.random::<u64>() % 8) as usize;
        let row = m.row_mut(i);
        row[0] = centers.get(k, 0) + std * standard_normal(rng);
        row[1] = centers.get(k, 1) + std * standard_normal(rng);
    }
    m
}

/// Mixture of 8 Gaussians on a circle of radius 2 at 45-degree steps.
pub fn gen_eight_gaussians(n: usize, std: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset {
        name: "8gaussians".into(),
        points: sample_eight_gaussians(n, std, &mut rng),
        mode_centers: Some(eight_gaussian_centers()),
        noise_sigma: std,
    }
}

pub(crate) fn grid_centers() -> Matrix {
    let mut c = Matrix::zeros(25, 2);
    for i in 0..5 {
        for j in 0..5 {
            c.set(i * 5 + j, 0, -4.0 + 2.0 * i as f64);
            c.set(i * 5 + j, 1, -4.0 + 2.0 * j as f64);
        }
    }
    c
}

pub(crate) fn sample_grids(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let centers = grid_centers();
    let mut m = Matrix::zeros(n, 2);
    for i in 0..n {
        let k = (rng.random::<u64>() % 25) as usize;
        let row = m.row_mut(i);
        row[0] = centers.get(k, 0) + std * standard_normal(rng);
        row[1] = centers.get(k, 1) + std * standard_normal(rng);
    }
    m
}

/// Mixture of 25 Gaussians on a 5x5 lattice spanning [-4, 4]^2
/// (spacing 2).
pub fn gen_grids(n: usize, std: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset {
        name: "grids".into(),
        points: sample_grids(n, std, &mut rng),
        mode_centers: Some(grid_centers()),
        noise_sigma: std,
    }
}

// ---- IDX image files -------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let end = at + 4;
    if end > bytes.len() {
        return Err(Error::Format("idx header truncated".into()));
    }
    Ok(u32::from_be_bytes(bytes[at..end].try_into().unwrap()))
}

/// Loads big-endian IDX images (magic 0x00000803) as rows in [-1, 1]
/// (byte 0 -> -1, byte 255 -> +1). 28x28 images are padded to 32x32
/// with -1 so the flattened width is a power of two; other square sizes
/// pass through. With `labels` given (magic 0x00000801), the counts
/// must agree.
pub fn load_idx_images(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let bytes = read_file(images)?;
    let magic = be_u32(&bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad idx image magic 0x{magic:08x}, want 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let count = be_u32(&bytes, 4)? as usize;
    let rows = be_u32(&bytes, 8)? as usize;
    let cols = be_u32(&bytes, 12)? as usize;
    if rows != cols {
        return Err(Error::Format(format!(
            "only square images are supported, got {rows}x{cols}"
        )));
    }
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Format(format!(
            "idx image payload truncated: have {} bytes, need {need}",
            bytes.len()
        )));
    }
    if let Some(lp) = labels {
        let lb = read_file(lp)?;
        let lmagic = be_u32(&lb, 0)?;
        if lmagic != IDX_LABELS_MAGIC {
            return Err(Error::Format(format!(
                "bad idx label magic 0x{lmagic:08x}, want 0x{IDX_LABELS_MAGIC:08x}"
            )));
        }
        let lcount = be_u32(&lb, 4)? as usize;
        if lcount != count {
            return Err(Error::Format(format!(
                "label count {lcount} does not match image count {count}"
            )));
        }
        if lb.len() < 8 + lcount {
            return Err(Error::Format("idx label payload truncated".into()));
        }
    }
    let (side, pad) = if rows == 28 { (32, 2) } else { (rows, 0) };
    let mut points = Matrix::zeros(count, side * side);
    if pad > 0 {
        for v in points.data_mut() {
            *v = -1.0;
        }
    }
    for img in 0..count {
        let src = &bytes[16 + img * rows * cols..16 + (img + 1) * rows * cols];
        let dst = points.row_mut(img);
        for r in 0..rows {
            for c in 0..cols {
                let v = src[r * cols + c] as f64 / 255.0 * 2.0 - 1.0;
                dst[(r + pad) * side + (c + pad)] = v;
            }
        }
    }
    let name = images
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(Dataset {
        name,
        points,
        mode_centers: None,
        noise_sigma: 0.0,
    })
}

// ---- degradations ----------------------------------------------------------

/// A corruption applied to image batches before restoration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationSpec {
    /// Separable Gaussian blur, sigma = `blur_level`, kernel size
    /// `2*ceil(2*blur_level)+1`, reflected borders.
    Blur { blur_level: f64 },
    /// Additive pixel-wise Gaussian noise.
    GaussianNoise {
        #[serde(default = "default_noise_sigma")]
        sigma: f64,
    },
    /// Sets round(corrupt_frac * D) pixels per image to +-1, half salt
    /// (+1, rounded up) and half pepper (-1).
    SaltPepper {
        #[serde(default = "default_corrupt_frac")]
        corrupt_frac: f64,
    },
    /// Deletes each pixel row and column independently with
    /// `delete_prob`, writing `fill_value`.
    LinesRows {
        #[serde(default = "default_delete_prob")]
        delete_prob: f64,
        #[serde(default = "default_fill_value")]
        fill_value: f64,
    },
}

fn default_noise_sigma() -> f64 {
    1.0
}
fn default_corrupt_frac() -> f64 {
    0.2
}
fn default_delete_prob() -> f64 {
    0.2
}
fn default_fill_value() -> f64 {
    -1.0
}

impl DegradationSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DegradationSpec::Blur { .. } => "blur",
            DegradationSpec::GaussianNoise { .. } => "gaussian_noise",
            DegradationSpec::SaltPepper { .. } => "salt_pepper",
            DegradationSpec::LinesRows { .. } => "lines_rows",
        }
    }
}

fn image_side(d: usize) -> Result<usize> {
    let s = (d as f64).sqrt().round() as usize;
    if s * s != d {
        return Err(Error::InvalidArg(format!(
            "row width {d} is not a square image"
        )));
    }
    Ok(s)
}

/// Index reflected back into [0, n): mirror at the edge pixels without
/// repeating them.
fn reflect(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (2.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|o| (-0.5 * (o as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn blur_image(img: &mut [f64], side: usize, kernel: &[f64]) {
    let half = (kernel.len() / 2) as i64;
    let n = side as i64;
    let mut tmp = vec![0.0; side * side];
    // Horizontal pass.
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let cc = reflect(c as i64 + t as i64 - half, n);
                acc += kv * img[r * side + cc];
            }
            tmp[r * side + c] = acc;
        }
    }
    // Vertical pass.
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let rr = reflect(r as i64 + t as i64 - half, n);
                acc += kv * tmp[rr * side + c];
            }
            img[r * side + c] = acc;
        }
    }
}

/// Applies the degradation to every row of `batch`. Deterministic in
/// `seed`; images are processed in row order from a single stream.
pub fn degrade(batch: &Matrix, spec: &DegradationSpec, seed: u64) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = batch.cols();
    let mut out = batch.clone();
    match *spec {
        DegradationSpec::Blur { blur_level } => {
            if !(blur_level > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "blur_level must be positive, got {blur_level}"
                )));
            }
            let side = image_side(d)?;
            let kernel = gaussian_kernel(blur_level);
            for i in 0..out.rows() {
                blur_image(out.row_mut(i), side, &kernel);
            }
        }
        DegradationSpec::GaussianNoise { sigma } => {
            if sigma < 0.0 {
                return Err(Error::InvalidArg(format!(
                    "noise sigma must be non-negative, got {sigma}"
                )));
            }
            for v in out.data_mut() {
                *v += sigma * standard_normal(&mut rng);
            }
        }
        DegradationSpec::SaltPepper { corrupt_frac } => {
            if !(0.0..=1.0).contains(&corrupt_frac) {
                return Err(Error::InvalidArg(format!(
                    "corrupt_frac must be in [0,1], got {corrupt_frac}"
                )));
            }
            let k = (corrupt_frac * d as f64).round() as usize;
            let n_salt = k.div_ceil(2);
            let mut slots: Vec<usize> = Vec::new();
            for i in 0..out.rows() {
                slots.clear();
                slots.extend(0..d);
                // Partial Fisher-Yates: the first k slots are a uniform
                // sample without replacement.
                for t in 0..k {
                    let j = rng.random_range(t..d);
                    slots.swap(t, j);
                }
                let row = out.row_mut(i);
                for (t, &px) in slots[..k].iter().enumerate() {
                    row[px] = if t < n_salt { 1.0 } else { -1.0 };
                }
            }
        }
        DegradationSpec::LinesRows {
            delete_prob,
            fill_value,
        } => {
            if !(0.0..=1.0).contains(&delete_prob) {
                return Err(Error::InvalidArg(format!(
                    "delete_prob must be in [0,1], got {delete_prob}"
                )));
            }
            let side = image_side(d)?;
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                for r in 0..side {
                    if rng.random::<f64>() < delete_prob {
                        for c in 0..side {
                            row[r * side + c] = fill_value;
                        }
                    }
                }
                for c in 0..side {
                    if rng.random::<f64>() < delete_prob {
                        for r in 0..side {
                            row[r * side + c] = fill_value;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---- priors ----------------------------------------------------------------

/// Latent distribution the generator maps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    StandardNormal,
    /// Random-phase images sharing the reference batch's mean Fourier
    /// amplitude spectrum, standardized per sample. Needs a reference
    /// batch of square images.
    FourierMatched,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::StandardNormal
    }
}

pub(crate) fn sample_prior_rng(
    spec: PriorSpec,
    n: usize,
    dim: usize,
    reference: Option<&Matrix>,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    match spec {
        PriorSpec::StandardNormal => {
            let mut m = Matrix::zeros(n, dim);
            for v in m.data_mut() {
                *v = standard_normal(rng);
            }
            Ok(m)
        }
        PriorSpec::FourierMatched => {
            let reference = reference.ok_or_else(|| {
                Error::InvalidArg("fourier_matched prior needs a reference batch".into())
            })?;
            if reference.cols() != dim {
                return Err(Error::DimMismatch(format!(
                    "reference width {} vs requested dim {dim}",
                    reference.cols()
                )));
            }
            if reference.rows() == 0 {
                return Err(Error::InvalidArg(
                    "fourier_matched prior needs a non-empty reference batch".into(),
                ));
            }
            let side = image_side(dim)?;
            Ok(fourier_matched(reference, side, n, rng))
        }
    }
}

/// Draws `n` latent vectors. `fourier_matched` derives per-frequency
/// amplitudes from `reference` and randomizes phases with Hermitian
/// symmetry, so samples are exactly real before standardization.
pub fn sample_prior(
    spec: PriorSpec,
    n: usize,
    dim: usize,
    reference: Option<&Matrix>,
    seed: u64,
) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_prior_rng(spec, n, dim, reference, &mut rng)
}

fn fft2(data: &mut Vec<Complex<f64>>, side: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let fft = if inverse {
        planner.plan_fft_inverse(side)
    } else {
        planner.plan_fft_forward(side)
    };
    fft.process(data); // all rows at once
    // Columns: transpose, transform rows, transpose back.
    let mut t = vec![Complex::new(0.0, 0.0); side * side];
    for r in 0..side {
        for c in 0..side {
            t[c * side + r] = data[r * side + c];
        }
    }
    fft.process(&mut t);
    for r in 0..side {
        for c in 0..side {
            data[r * side + c] = t[c * side + r];
        }
    }
}

pub(crate) fn mean_amplitude_spectrum(reference: &Matrix, side: usize) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut amp = vec![0.0; side * side];
    for i in 0..reference.rows() {
        let mut buf: Vec<Complex<f64>> = reference
            .row(i)
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        fft2(&mut buf, side, &mut planner, false);
        for (a, c) in amp.iter_mut().zip(&buf) {
            *a += c.norm();
        }
    }
    for a in &mut amp {
        *a /= reference.rows() as f64;
    }
    amp
}

fn fourier_matched(reference: &Matrix, side: usize, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let amp = mean_amplitude_spectrum(reference, side);
    let mut planner = FftPlanner::new();
    let mut out = Matrix::zeros(n, side * side);
    let mut spectrum = vec![Complex::new(0.0, 0.0); side * side];
    for s in 0..n {
        // Hermitian-symmetric random phases make the inverse exactly real.
        for v in spectrum.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        for u in 0..side {
            for v in 0..side {
                let (mu, mv) = ((side - u) % side, (side - v) % side);
                if (mu, mv) == (u, v) {
                    spectrum[u * side + v] = Complex::new(amp[u * side + v], 0.0);
                } else if (u, v) < (mu, mv) {
                    let phase = rng.random::<f64>() * std::f64::consts::TAU;
                    let (sin, cos) = phase.sin_cos();
                    spectrum[u * side + v] = amp[u * side + v] * Complex::new(cos, sin);
                    spectrum[mu * side + mv] = amp[mu * side + mv] * Complex::new(cos, -sin);
                }
            }
        }
        fft2(&mut spectrum, side, &mut planner, true);
        let scale = 1.0 / (side * side) as f64;
        let row = out.row_mut(s);
        for (o, c) in row.iter_mut().zip(&spectrum) {
            *o = c.re * scale;
        }
        // Standardize to zero mean, unit variance.
        let d = row.len() as f64;
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let std = var.sqrt();
        if std > 1e-12 {
            for v in row.iter_mut() {
                *v = (*v - mean) / std;
            }
        } else {
            for v in row.iter_mut() {
                *v = 0.0;
            }
        }
    }
    out
}

// ---- CSV + metadata --------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    name: String,
    noise_sigma: f64,
    mode_centers: Option<Vec<Vec<f64>>>,
}

/// Writes points as CSV with header `x0,...,x{D-1}`. Values use the
/// shortest round-tripping decimal form.
pub fn save_points_csv(points: &Matrix, path: &Path) -> Result<()> {
    let mut s = String::new();
    for j in 0..points.cols() {
        if j > 0 {
            s.push(',');
        }
        s.push_str(&format!("x{j}"));
    }
    s.push('\n');
    for i in 0..points.rows() {
        for (j, v) in points.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&format!("{v}"));
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_points_csv(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty csv", path.display())))?;
    let d = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: bad float {field:?}",
                    path.display(),
                    lineno + 2
                ))
            })?;
            data.push(v);
            count += 1;
        }
        if count != d {
            return Err(Error::Format(format!(
                "{}:{}: {count} fields, header has {d}",
                path.display(),
                lineno + 2
            )));
        }
        rows += 1;
    }
    Ok(Matrix::from_vec(rows, d, data))
}

fn meta_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("meta.json")
}

impl Dataset {
    /// CSV at `path` plus a `.meta.json` sidecar with name, noise level
    /// and mixture centers.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        save_points_csv(&self.points, path)?;
        let meta = DatasetMeta {
            name: self.name.clone(),
            noise_sigma: self.noise_sigma,
            mode_centers: self
                .mode_centers
                .as_ref()
                .map(|m| (0..m.rows()).map(|i| m.row(i).to_vec()).collect()),
        };
        let mp = meta_path(path);
        std::fs::write(&mp, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&mp, e))
    }

    /// Loads a CSV; picks up the `.meta.json` sidecar when present.
    pub fn load_csv(path: &Path) -> Result<Dataset> {
        let points = load_points_csv(path)?;
        let mp = meta_path(path);
        if mp.exists() {
            let meta: DatasetMeta = serde_json::from_str(
                &std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?,
            )?;
            Ok(Dataset {
                name: meta.name,
                points,
                mode_centers: meta.mode_centers.map(|rows| Matrix::from_rows(&rows)),
                noise_sigma: meta.noise_sigma,
            })
        } else {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into());
            Ok(Dataset {
                name,
                points,
                mode_centers: None,
                noise_sigma: 0.0,
            })
        }
    }
}

// ---- dataset configs and CLI wiring -----------------------------------------

fn default_moon_noise() -> f64 {
    0.1
}
fn default_gauss_std() -> f64 {
    0.1
}
fn default_grid_std() -> f64 {
    0.05
}

/// Where training/evaluation data comes from. Synthetic kinds resample
/// freely; file kinds load once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DatasetSpec {
    #[serde(rename = "two_moons", alias = "2moons")]
    TwoMoons {
        #[serde(default = "default_moon_noise")]
        noise: f64,
    },
    #[serde(rename = "eight_gaussians", alias = "8gaussians")]
    EightGaussians {
        #[serde(default = "default_gauss_std")]
        std: f64,
    },
    #[serde(rename = "grids")]
    Grids {
        #[serde(default = "default_grid_std")]
        std: f64,
    },
    #[serde(rename = "csv")]
    Csv { path: String },
    #[serde(rename = "idx")]
    Idx {
        images: String,
        labels: Option<String>,
    },
}

impl DatasetSpec {
    pub fn is_synthetic(&self) -> bool {
        matches!(
            self,
            DatasetSpec::TwoMoons { .. } | DatasetSpec::EightGaussians { .. } | DatasetSpec::Grids { .. }
        )
    }

    /// Materializes `n` points (synthetic) or loads the file (`n` is
    /// ignored for file sources).
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::TwoMoons { noise } => Ok(gen_two_moons(n, *noise, seed)),
            DatasetSpec::EightGaussians { std } => Ok(gen_eight_gaussians(n, *std, seed)),
            DatasetSpec::Grids { std } => Ok(gen_grids(n, *std, seed)),
            DatasetSpec::Csv { path } => Dataset::load_csv(Path::new(path)),
            DatasetSpec::Idx { images, labels } => {
                load_idx_images(Path::new(images), labels.as_deref().map(Path::new))
            }
        }
    }

    pub(crate) fn sample_batch(&self, n: usize, rng: &mut ChaCha8Rng) -> Option<Matrix> {
        match self {
            DatasetSpec::TwoMoons { noise } => Some(sample_two_moons(n, *noise, rng)),
            DatasetSpec::EightGaussians { std } => Some(sample_eight_gaussians(n, *std, rng)),
            DatasetSpec::Grids { std } => Some(sample_grids(n, *std, rng)),
            _ => None,
        }
    }
}
