//! Command-line surface: dataset generation, training, generation and
//! restoration evaluation, field/projection export, and a gradient
//! self-check. Every command is deterministic given its flags and
//! seeds, writes all artifacts under its output directory, and leaves
//! a manifest with SHA-256 checksums of what it produced.
//!
//! Exit codes: 0 success, 1 failed check or aborted run, 2 usage or
//! config error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::datasets::{
    degrade, gen_eight_gaussians, gen_grids, gen_two_moons, load_idx_images, sample_prior,
    Dataset, DegradationSpec, PriorSpec,
};
use crate::error::{Error, Result};
use crate::fields::{
    grid_eval, grid_points, projection_map, render_field_svg, render_projection_svg, FieldKind,
    FieldSource, ManifoldSpec,
};
use crate::losses::{idem_loss, imle_loss, rec_loss, tight_loss};
use crate::metrics::{eval_generation, mae, mode_coverage, GenEvalReport, MetricsTable, ModeReport};
use crate::net::{finite_diff_grads, forward, init_mlp, Activation, GradientSet, MlpArch, MlpParams};
use crate::numerics::{distance, Matrix, Metric};
use crate::trainer::{load_checkpoint, run_training, Checkpoint, TrainConfig};

/// Parses argv and runs one command, returning the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let command_line = args.join(" ");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, &command_line) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } | Error::NoConvergence(_) => 1,
        _ => 2,
    }
}

#[derive(Parser)]
#[command(
    name = "naign",
    version,
    about = "Train and probe idempotent generative networks on 2D point clouds and small images"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset CSV with its JSON metadata sidecar
    GenData(GenDataArgs),
    /// Train a model from a JSON config
    Train(TrainArgs),
    /// Score generated samples against real data
    EvalGen(EvalGenArgs),
    /// Degrade data, restore it with the model, report MAE
    EvalRestore(EvalRestoreArgs),
    /// Export a scalar field over a 2D grid as CSV + SVG
    Field(FieldArgs),
    /// Export where grid points land under the map as CSV + SVG
    Project(ProjectArgs),
    /// Export the model-induced density field (shortcut for
    /// `field --kind density`)
    Density(DensityArgs),
    /// Compare analytic loss gradients against finite differences
    GradCheck(GradCheckArgs),
}

fn dispatch(cli: Cli, command_line: &str) -> Result<i32> {
    match cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(a, command_line),
        Cmd::Train(a) => cmd_train(a, command_line),
        Cmd::EvalGen(a) => cmd_eval_gen(a, command_line),
        Cmd::EvalRestore(a) => cmd_eval_restore(a, command_line),
        Cmd::Field(a) => cmd_field(a, command_line),
        Cmd::Project(a) => cmd_project(a, command_line),
        Cmd::Density(a) => cmd_density(a, command_line),
        Cmd::GradCheck(a) => cmd_grad_check(a, command_line),
    }
}

// ---- run manifest -------------------------------------------------------------

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_sha256: Option<String>,
    seed: Option<u64>,
    outputs: Vec<ManifestEntry>,
    wall_ms: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            use std::fmt::Write;
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Checksums every produced file and writes the manifest atomically.
fn write_manifest(
    manifest_path: &Path,
    command: &str,
    config_sha256: Option<String>,
    seed: Option<u64>,
    outputs: &[PathBuf],
    started: Instant,
) -> Result<()> {
    let mut entries = Vec::new();
    for p in outputs {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        entries.push(ManifestEntry {
            path: p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = RunManifest {
        command: command.to_string(),
        config_sha256,
        seed,
        outputs: entries,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    atomic_write(manifest_path, json.as_bytes())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

// ---- shared dataset flags --------------------------------------------------------

#[derive(Args, Clone)]
struct DataArgs {
    /// 2moons | 8gaussians | grids | mnist | path to a points CSV
    #[arg(long)]
    dataset: String,
    /// Rows to synthesize (file sources keep their own row count)
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// Noise scale for synthetic data (per-dataset default when omitted)
    #[arg(long)]
    noise: Option<f64>,
    /// Seed for synthetic sampling
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// IDX image file (required for mnist)
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (optional for mnist)
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl DataArgs {
    fn resolve(&self) -> Result<Dataset> {
        resolve_dataset(
            &self.dataset,
            self.n,
            self.noise,
            self.data_seed,
            self.images.as_deref(),
            self.labels.as_deref(),
        )
    }
}

fn resolve_dataset(
    name: &str,
    n: usize,
    noise: Option<f64>,
    seed: u64,
    images: Option<&Path>,
    labels: Option<&Path>,
) -> Result<Dataset> {
    match name {
        "2moons" | "two_moons" => Ok(gen_two_moons(n, noise.unwrap_or(0.1), seed)),
        "8gaussians" | "eight_gaussians" => Ok(gen_eight_gaussians(n, noise.unwrap_or(0.1), seed)),
        "grids" => Ok(gen_grids(n, noise.unwrap_or(0.05), seed)),
        "mnist" | "idx" => {
            let images = images.ok_or(Error::Config {
                field: "images",
                msg: "--images <IDX file> is required for --dataset mnist".into(),
            })?;
            load_idx_images(images, labels)
        }
        other => {
            let p = Path::new(other);
            if p.is_file() {
                Dataset::load_csv(p)
            } else {
                Err(Error::Config {
                    field: "dataset",
                    msg: format!(
                        "unknown dataset {other:?} (expected 2moons, 8gaussians, grids, mnist, or an existing CSV path)"
                    ),
                })
            }
        }
    }
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path)
}

fn ckpt_metric(ck: &Checkpoint) -> Metric {
    ck.config.as_ref().map(|c| c.metric).unwrap_or_default()
}

fn require_width(ck: &Checkpoint, width: usize) -> Result<()> {
    if ck.params.arch.dim != width {
        return Err(Error::DimMismatch(format!(
            "checkpoint dim {} vs data width {width}",
            ck.params.arch.dim
        )));
    }
    Ok(())
}

// ---- gen-data ---------------------------------------------------------------------

#[derive(Args)]
struct GenDataArgs {
    /// 2moons | 8gaussians | grids | mnist
    #[arg(long)]
    dataset: String,
    /// Number of points
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Noise scale (per-dataset default when omitted)
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (default <dataset>.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    /// IDX image file (required for mnist)
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (optional for mnist)
    #[arg(long)]
    labels: Option<PathBuf>,
}

fn cmd_gen_data(a: GenDataArgs, command_line: &str) -> Result<i32> {
    let started = Instant::now();
    let ds = resolve_dataset(
        &a.dataset,
        a.n,
        a.noise,
        a.seed,
        a.images.as_deref(),
        a.labels.as_deref(),
    )?;
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", ds.name)));
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    ds.save_csv(&out)?;
    let meta = out.with_extension("meta.json");
    println!(
        "wrote {} rows={} cols={}",
        out.display(),
        ds.points.rows(),
        ds.points.cols()
    );
    println!(
        "meta {} centers={}",
        meta.display(),
        ds.mode_centers.as_ref().map_or(0, |c| c.rows())
    );
    let manifest = out.with_extension("manifest.json");
    write_manifest(
        &manifest,
        command_line,
        None,
        Some(a.seed),
        &[out, meta],
        started,
    )?;
    Ok(0)
}

// ---- train --------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    /// JSON training config
    #[arg(long)]
    config: PathBuf,
    /// Directory for checkpoints, logs, and the manifest
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
}

fn cmd_train(a: TrainArgs, command_line: &str) -> Result<i32> {
    let started = Instant::now();
    let cfg_bytes = std::fs::read(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let cfg = TrainConfig::from_json_file(&a.config)?;
    let outcome = run_training(&cfg, Some(&a.out_dir))?;
    println!(
        "trained method={} steps={} skipped={} final_loss={:.6}",
        cfg.method.name(),
        outcome.steps_done,
        outcome.skipped_steps,
        outcome.final_loss.as_ref().map_or(f64::NAN, |b| b.total)
    );
    let mut outputs = vec![a.out_dir.join("config.json")];
    if let Some(p) = &outcome.log_path {
        outputs.push(p.clone());
    }
    if let Some(p) = &outcome.checkpoint_path {
        println!("checkpoint {}", p.display());
        outputs.push(p.clone());
    }
    write_manifest(
        &a.out_dir.join("run_manifest.json"),
        command_line,
        Some(sha256_hex(&cfg_bytes)),
        Some(cfg.seed),
        &outputs,
        started,
    )?;
    Ok(0)
}

// ---- eval-gen -----------------------------------------------------------------------

#[derive(Args)]
struct EvalGenArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Generated sample count
    #[arg(long, default_value_t = 4096)]
    n_gen: usize,
    /// Neighborhood size for coverage/density balls
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Score f(f(z)) instead of f(z)
    #[arg(long)]
    second_pass: bool,
    /// Seed for the prior draw
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct EvalGenOutput {
    gen_eval: GenEvalReport,
    modes: Option<ModeReport>,
    second_pass: bool,
    seed: u64,
}

/// Prior draws pushed through the map once (or twice). The first rows
/// of the real set serve as the reference for data-matched priors.
fn generate_from_checkpoint(
    ck: &Checkpoint,
    real: &Matrix,
    n_gen: usize,
    seed: u64,
    second_pass: bool,
) -> Result<Matrix> {
    let prior = ck
        .config
        .as_ref()
        .map(|c| c.prior.clone())
        .unwrap_or(PriorSpec::StandardNormal);
    let dim = ck.params.arch.dim;
    let n_ref = real.rows().min(256);
    let idx: Vec<usize> = (0..n_ref).collect();
    let reference = real.select_rows(&idx);
    let z = sample_prior(prior, n_gen, dim, Some(&reference), seed)?;
    let mut gen = forward(&ck.params, &z);
    if second_pass {
        gen = forward(&ck.params, &gen);
    }
    Ok(gen)
}

fn cmd_eval_gen(a: EvalGenArgs, command_line: &str) -> Result<i32> {
    let started = Instant::now();
    let ck = load_ckpt(&a.ckpt)?;
    let real = a.data.resolve()?;
    require_width(&ck, real.points.cols())?;
    let gen = generate_from_checkpoint(&ck, &real.points, a.n_gen, a.seed, a.second_pass)?;
    let report = eval_generation(&real.points, &gen, a.k)?;
    let modes = real.mode_centers.as_ref().map(|centers| {
        let sigma = if real.noise_sigma > 0.0 {
            real.noise_sigma
        } else {
            0.05
        };
        mode_coverage(&gen, centers, 3.0, sigma)
    });
    println!(
        "gen_eval fld={:.6} coverage={:.4} density={:.4} n_real={} n_gen={} k={} features={}",
        report.fld, report.coverage, report.density, report.n_real, report.n_gen, report.k,
        report.feature_map
    );
    if let Some(m) = &modes {
        println!(
            "modes covered={}/{} entropy={:.4}",
            m.covered_modes,
            m.hits.len(),
            m.collapse_entropy
        );
    }
    ensure_dir(&a.out_dir)?;
    let json_path = a.out_dir.join("eval_gen.json");
    write_json(
        &json_path,
        &EvalGenOutput {
            gen_eval: report.clone(),
            modes: modes.clone(),
            second_pass: a.second_pass,
            seed: a.seed,
        },
    )?;
    let mut table = MetricsTable::new(
        "run",
        &["fld", "coverage", "density", "covered_modes", "collapse_entropy"],
    );
    let pass = if a.second_pass { "f(f(z))" } else { "f(z)" };
    table.push_row(
        pass,
        vec![
            report.fld,
            report.coverage,
            report.density,
            modes.as_ref().map_or(f64::NAN, |m| m.covered_modes as f64),
            modes.as_ref().map_or(f64::NAN, |m| m.collapse_entropy),
        ],
    );
    let csv_path = a.out_dir.join("eval_gen.csv");
    table.save(&csv_path)?;
    println!("report {}", json_path.display());
    write_manifest(
        &a.out_dir.join("run_manifest.json"),
        command_line,
        None,
        Some(a.seed),
        &[json_path, csv_path],
        started,
    )?;
    Ok(0)
}

// ---- eval-restore ----------------------------------------------------------------------

#[derive(Args)]
struct EvalRestoreArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// blur | gaussian_noise | salt_pepper | lines_rows, or an inline
    /// JSON spec like {"kind":"blur","blur_level":0.5}
    #[arg(long)]
    degradation: String,
    /// Degradation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn parse_degradation(s: &str) -> Result<DegradationSpec> {
    let trimmed = s.trim();
    if trimmed.starts_with('{') {
        return Ok(serde_json::from_str(trimmed)?);
    }
    match trimmed {
        // Bare names take each kind's default strength. Blur has no
        // sensible default strength, so it must be given explicitly.
        "blur" => Err(Error::Config {
            field: "degradation",
            msg: "blur needs an explicit level: pass {\"kind\":\"blur\",\"blur_level\":...}".into(),
        }),
        "gaussian_noise" | "salt_pepper" | "lines_rows" => {
            Ok(serde_json::from_str(&format!("{{\"kind\":\"{trimmed}\"}}"))?)
        }
        other => Err(Error::Config {
            field: "degradation",
            msg: format!(
                "unknown degradation {other:?} (expected blur, gaussian_noise, salt_pepper, lines_rows, or a JSON spec)"
            ),
        }),
    }
}

#[derive(Serialize)]
struct EvalRestoreOutput {
    kind: String,
    spec: DegradationSpec,
    seed: u64,
    n: usize,
    mae_restored: f64,
    mae_degraded: f64,
}

fn cmd_eval_restore(a: EvalRestoreArgs, command_line: &str) -> Result<i32> {
    let started = Instant::now();
    let ck = load_ckpt(&a.ckpt)?;
    let spec = parse_degradation(&a.degradation)?;
    let original = a.data.resolve()?;
    require_width(&ck, original.points.cols())?;
    let degraded = degrade(&original.points, &spec, a.seed)?;
    let restored = forward(&ck.params, &degraded);
    let mae_restored = mae(&original.points, &restored)?;
    let mae_degraded = mae(&original.points, &degraded)?;
    println!(
        "restore kind={} mae_restored={:.6} mae_degraded={:.6} n={}",
        spec.kind_name(),
        mae_restored,
        mae_degraded,
        original.points.rows()
    );
    ensure_dir(&a.out_dir)?;
    let json_path = a.out_dir.join("eval_restore.json");
    write_json(
        &json_path,
        &EvalRestoreOutput {
            kind: spec.kind_name().to_string(),
            spec,
            seed: a.seed,
            n: original.points.rows(),
            mae_restored,
            mae_degraded,
        },
    )?;
    println!("report {}", json_path.display());
    write_manifest(
        &a.out_dir.join("run_manifest.json"),
        command_line,
        None,
        Some(a.seed),
        &[json_path],
        started,
    )?;
    Ok(0)
}

// ---- field / project / density ------------------------------------------------------------

fn parse_bbox(s: &str) -> Result<(f64, f64, f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::Config {
            field: "bbox",
            msg: format!("expected xmin,xmax,ymin,ymax, got {s:?}"),
        });
    }
    let mut v = [0.0; 4];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse().map_err(|_| Error::Config {
            field: "bbox",
            msg: format!("{p:?} is not a number"),
        })?;
    }
    Ok((v[0], v[1], v[2], v[3]))
}

fn parse_res(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || Error::Config {
        field: "res",
        msg: format!("expected NX or NX,NY, got {s:?}"),
    };
    match parts.as_slice() {
        [n] => {
            let n = n.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
        [nx, ny] => Ok((
            nx.trim().parse().map_err(|_| bad())?,
            ny.trim().parse().map_err(|_| bad())?,
        )),
        _ => Err(bad()),
    }
}

#[derive(Args)]
struct FieldArgs {
    /// Trained checkpoint (drift-based fields)
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Dataset standing in for the manifold (distance-based fields)
    #[arg(long)]
    dataset: Option<String>,
    /// Rows to synthesize for the manifold
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// Noise scale (0 selects the analytic manifold for synthetic names)
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// drift | distance | energy | density
    #[arg(long, default_value = "drift")]
    kind: String,
    /// xmin,xmax,ymin,ymax
    #[arg(long, default_value = "-3,3,-3,3", allow_hyphen_values = true)]
    bbox: String,
    /// Grid resolution NX or NX,NY
    #[arg(long, default_value = "200")]
    res: String,
    /// Energy growth rate
    #[arg(long, default_value_t = 2.0)]
    k: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn cmd_field(a: FieldArgs, command_line: &str) -> Result<i32> {
    let started = Instant::now();
    let kind: FieldKind = a.kind.parse()?;
    let bbox = parse_bbox(&a.bbox)?;
    let (nx, ny) = parse_res(&a.res)?;

    let (ck, manifold) = match (&a.ckpt, &a.dataset) {
        (Some(p), None) => (Some(load_ckpt(p)?), None),
        (None, Some(name)) => {
            let ds = resolve_dataset(name, a.n, a.noise, a.data_seed, None, None)?;
            (None, Some(ManifoldSpec::for_dataset(&ds)))
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config {
                field: "ckpt",
                msg: "give either --ckpt (drift source) or --dataset (manifold source), not both"
                    .into(),
            })
        }
        (None, None) => {
            return Err(Error::Config {
                field: "ckpt",
                msg: "a field needs a source: --ckpt or --dataset".into(),
            })
        }
    };
    if kind == FieldKind::Drift && ck.is_none() {
        return Err(Error::Config {
            field: "kind",
            msg: "drift fields need --ckpt".into(),
        });
    }
    if kind == FieldKind::Distance && manifold.is_none() {
        return Err(Error::Config {
            field: "kind",
            msg: "distance fields need --dataset".into(),
        });
    }
    let metric = ck.as_ref().map(ckpt_metric).unwrap_or_default();
    let source = match (&ck, &manifold) {
        (Some(c), _) => FieldSource::Model(&c.params),
        (_, Some(m)) => FieldSource::Manifold(m),
        _ => unreachable!(),
    };
    let grid = grid_eval(
        &source, bbox.0, bbox.1, bbox.2, bbox.3, nx, ny, kind, metric, a.k,
    )?;
    emit_grid(&grid, &a.out_dir, kind.name(), command_line, started)
}

fn emit_grid(
    grid: &crate::fields::FieldGrid,
    out_dir: &Path,
    stem: &str,
    command_line: &str,
    started: Instant,
) -> Result<i32> {
    ensure_dir(out_dir)?;
    let csv_path = out_dir.join(format!("field_{stem}.csv"));
    let svg_path = out_dir.join(format!("field_{stem}.svg"));
    grid.save_csv(&csv_path)?;
    render_field_svg(grid, &svg_path)?;
    let (lo, hi) = grid.min_max();
    println!(
        "field kind={} grid={}x{} min={:.6} max={:.6}",
        grid.kind.name(),
        grid.nx,
        grid.ny,
        lo,
        hi
    );
    println!("csv {}", csv_path.display());
    println!("svg {}", svg_path.display());
    write_manifest(
        &out_dir.join("run_manifest.json"),
        command_line,
        None,
        None,
        &[csv_path, svg_path],
        started,
    )?;
    Ok(0)
}

#[derive(Args)]
struct ProjectArgs {
    /// Trained checkpoint (2D)
    #[arg(long)]
    ckpt: PathBuf,
    /// Grid side length; the map is sampled at grid-res^2 cell centers
    #[arg(long, default_value_t = 20)]
    grid_res: usize,
    /// xmin,xmax,ymin,ymax
    #[arg(long, default_value = "-3,3,-3,3", allow_hyphen_values = true)]
    bbox: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn cmd_project(a: ProjectArgs, command_line: &str) -> Result<i32> {
    let started = Instant::now();
    let ck = load_ckpt(&a.ckpt)?;
    let bbox = parse_bbox(&a.bbox)?;
    let sources = grid_points(bbox.0, bbox.1, bbox.2, bbox.3, a.grid_res, a.grid_res)?;
    let pm = projection_map(&ck.params, &sources, ckpt_metric(&ck))?;
    let mean_drift = pm.norms.iter().sum::<f64>() / pm.norms.len().max(1) as f64;
    println!(
        "projection points={} mean_drift={:.6}",
        pm.sources.rows(),
        mean_drift
    );
    ensure_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join("projection.csv");
    let svg_path = a.out_dir.join("projection.svg");
    pm.save_csv(&csv_path)?;
    render_projection_svg(&pm, &svg_path)?;
    println!("csv {}", csv_path.display());
    println!("svg {}", svg_path.display());
    write_manifest(
        &a.out_dir.join("run_manifest.json"),
        command_line,
        None,
        None,
        &[csv_path, svg_path],
        started,
    )?;
    Ok(0)
}

#[derive(Args)]
struct DensityArgs {
    /// Trained checkpoint (2D)
    #[arg(long)]
    ckpt: PathBuf,
    /// Energy growth rate
    #[arg(long, default_value_t = 2.0)]
    k: f64,
    /// xmin,xmax,ymin,ymax
    #[arg(long, default_value = "-3,3,-3,3", allow_hyphen_values = true)]
    bbox: String,
    /// Grid resolution NX or NX,NY
    #[arg(long, default_value = "200")]
    res: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn cmd_density(a: DensityArgs, command_line: &str) -> Result<i32> {
    let started = Instant::now();
    let ck = load_ckpt(&a.ckpt)?;
    let bbox = parse_bbox(&a.bbox)?;
    let (nx, ny) = parse_res(&a.res)?;
    let grid = grid_eval(
        &FieldSource::Model(&ck.params),
        bbox.0,
        bbox.1,
        bbox.2,
        bbox.3,
        nx,
        ny,
        FieldKind::Density,
        ckpt_metric(&ck),
        a.k,
    )?;
    emit_grid(&grid, &a.out_dir, "density", command_line, started)
}

// ---- grad-check --------------------------------------------------------------------------

#[derive(Args)]
struct GradCheckArgs {
    /// Comma-separated layer widths, first and last equal (input and
    /// output live in the same space)
    #[arg(long, default_value = "2,8,8,2")]
    arch: String,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    /// Worst allowed relative error between analytic and
    /// finite-difference gradients
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn parse_arch(s: &str) -> Result<MlpArch> {
    let bad = |msg: String| Error::Config { field: "arch", msg };
    let dims: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(format!("expected comma-separated widths, got {s:?}")))?;
    if dims.len() < 2 {
        return Err(bad("need at least input and output widths".into()));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(bad("zero-width layer".into()));
    }
    if dims[0] != dims[dims.len() - 1] {
        return Err(bad(format!(
            "first and last widths must match, got {} and {}",
            dims[0],
            dims[dims.len() - 1]
        )));
    }
    Ok(MlpArch::new(dims[0], dims[1..dims.len() - 1].to_vec()))
}

fn randn(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for v in m.data_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    m
}

fn mean_rowwise_distance(a: &Matrix, b: &Matrix, metric: Metric) -> f64 {
    let n = a.rows();
    (0..n)
        .map(|i| distance(metric, a.row(i), b.row(i)))
        .sum::<f64>()
        / n as f64
}

/// Worst relative disagreement over entries with meaningful magnitude.
/// Relative mismatch with an absolute guard: the finite-difference
/// oracle at h=1e-4 carries up to ~5e-7 truncation noise on these
/// twice-applied nets, so coordinates below 1e-2 are scored against
/// that scale, not their own magnitude.
fn worst_rel_err(analytic: &GradientSet, fd: &GradientSet) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, b) in analytic.iter().zip(fd.iter()) {
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-2));
    }
    worst
}

const GRAD_CHECK_LOSSES: [&str; 5] = ["rec", "idem", "idem_modified", "tight", "imle"];

/// One trial: analytic gradients of each loss against central finite
/// differences on fresh random data, with stop-gradient passes frozen
/// at the unperturbed parameters. Returns per-loss worst errors in
/// [`GRAD_CHECK_LOSSES`] order.
fn grad_check_trial(params: &MlpParams, rng: &mut ChaCha8Rng, corrupt: bool) -> [f64; 5] {
    let metric = Metric::L2;
    let dim = params.arch.dim;
    let h = 1e-4;
    let x = randn(rng, 4, dim);
    let z = randn(rng, 4, dim);
    let zp = randn(rng, 4, dim);
    let cand = randn(rng, 12, dim);
    let frozen = params.clone();

    // The corruption hook is a negative control: it nudges one analytic
    // entry so the check must fail, proving it can.
    let taint = |mut g: GradientSet| {
        if corrupt {
            g.weights[0][0] += 1.0;
        }
        g
    };

    let rec = {
        let analytic = taint(rec_loss(params, &x, metric).1);
        let fd = finite_diff_grads(params, |q| rec_loss(q, &x, metric).0, h);
        worst_rel_err(&analytic, &fd)
    };
    let idem = {
        let analytic = taint(idem_loss(params, &z, None, metric).1);
        let fd = finite_diff_grads(
            params,
            |q| {
                let y = forward(q, &z);
                let w = forward(&frozen, &y);
                mean_rowwise_distance(&y, &w, metric)
            },
            h,
        );
        worst_rel_err(&analytic, &fd)
    };
    let idem_modified = {
        let analytic = taint(idem_loss(params, &z, Some(&zp), metric).1);
        let q_fixed = forward(&frozen, &zp);
        let fd = finite_diff_grads(
            params,
            |q| {
                let term = |batch: &Matrix| {
                    let y = forward(q, batch);
                    let w = forward(&frozen, &y);
                    mean_rowwise_distance(&y, &w, metric)
                };
                0.5 * (term(&z) + term(&q_fixed))
            },
            h,
        );
        worst_rel_err(&analytic, &fd)
    };
    let tight = {
        let analytic = taint(tight_loss(params, &z, metric).1);
        let fd = finite_diff_grads(
            params,
            |q| {
                let a = forward(&frozen, &z);
                let b = forward(q, &a);
                -mean_rowwise_distance(&a, &b, metric)
            },
            h,
        );
        worst_rel_err(&analytic, &fd)
    };
    let imle = {
        let analytic = taint(imle_loss(params, &x, &cand, metric).2);
        let fd = finite_diff_grads(params, |q| imle_loss(q, &x, &cand, metric).0, h);
        worst_rel_err(&analytic, &fd)
    };
    [rec, idem, idem_modified, tight, imle]
}

#[derive(Serialize)]
struct GradCheckReport {
    arch: Vec<usize>,
    trials: u64,
    tolerance: f64,
    worst: std::collections::BTreeMap<&'static str, f64>,
    pass: bool,
}

fn cmd_grad_check(a: GradCheckArgs, command_line: &str) -> Result<i32> {
    let started = Instant::now();
    // Central differences are only a valid oracle for a smooth map, so
    // the check runs on tanh nets regardless of the training default.
    let mut arch = parse_arch(&a.arch)?;
    arch.activation = Activation::Tanh;
    if !(a.tolerance > 0.0) {
        return Err(Error::Config {
            field: "tolerance",
            msg: format!("must be positive, got {}", a.tolerance),
        });
    }
    let corrupt = std::env::var("NAIGN_GRADCHECK_CORRUPT")
        .map(|v| !v.is_empty() && v != "0")
        .unwrap_or(false);
    let mut worst = [0.0f64; 5];
    for trial in 0..a.trials {
        let params = init_mlp(&arch, 7000 + trial);
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE ^ trial);
        let errs = grad_check_trial(&params, &mut rng, corrupt);
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let pass = worst.iter().all(|&w| w <= a.tolerance);
    let mut map = std::collections::BTreeMap::new();
    for (name, w) in GRAD_CHECK_LOSSES.iter().zip(worst) {
        println!(
            "{name:<14} worst_rel_err={w:.3e} tolerance={:.1e} {}",
            a.tolerance,
            if w <= a.tolerance { "ok" } else { "FAIL" }
        );
        map.insert(*name, w);
    }
    println!(
        "gradient check: {} ({} trials, arch {})",
        if pass { "PASS" } else { "FAIL" },
        a.trials,
        a.arch
    );
    ensure_dir(&a.out_dir)?;
    let report_path = a.out_dir.join("grad_check.json");
    write_json(
        &report_path,
        &GradCheckReport {
            arch: arch.widths(),
            trials: a.trials,
            tolerance: a.tolerance,
            worst: map,
            pass,
        },
    )?;
    write_manifest(
        &a.out_dir.join("run_manifest.json"),
        command_line,
        None,
        None,
        &[report_path],
        started,
    )?;
    Ok(if pass { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn runv(args: &[&str]) -> i32 {
        run(args.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn bbox_and_res_parsing() {
        assert_eq!(parse_bbox("-1,2,-3,4").unwrap(), (-1.0, 2.0, -3.0, 4.0));
        assert_eq!(parse_bbox(" 0 , 1 , 0 , 1 ").unwrap(), (0.0, 1.0, 0.0, 1.0));
        assert!(parse_bbox("1,2,3").is_err());
        assert!(parse_bbox("a,b,c,d").is_err());
        assert_eq!(parse_res("64").unwrap(), (64, 64));
        assert_eq!(parse_res("32,16").unwrap(), (32, 16));
        assert!(parse_res("x").is_err());
    }

    #[test]
    fn arch_parsing_requires_matching_ends() {
        let a = parse_arch("2,8,8,2").unwrap();
        assert_eq!(a.widths(), vec![2, 8, 8, 2]);
        assert!(parse_arch("2,8,3").is_err());
        assert!(parse_arch("2").is_err());
        assert!(parse_arch("2,0,2").is_err());
    }

    #[test]
    fn degradation_parsing_accepts_names_and_json() {
        // Blur strength has no default; the bare name is rejected.
        assert!(parse_degradation("blur").is_err());
        assert_eq!(
            parse_degradation(r#"{"kind":"blur","blur_level":0.5}"#).unwrap(),
            DegradationSpec::Blur { blur_level: 0.5 }
        );
        match parse_degradation("salt_pepper").unwrap() {
            DegradationSpec::SaltPepper { corrupt_frac } => assert_eq!(corrupt_frac, 0.2),
            other => panic!("{other:?}"),
        }
        match parse_degradation(r#"{"kind":"gaussian_noise","sigma":0.25}"#).unwrap() {
            DegradationSpec::GaussianNoise { sigma } => assert_eq!(sigma, 0.25),
            other => panic!("{other:?}"),
        }
        assert!(parse_degradation("melt").is_err());
    }

    #[test]
    fn unknown_dataset_is_a_config_error() {
        let e = resolve_dataset("nope", 10, None, 0, None, None).unwrap_err();
        assert!(matches!(e, Error::Config { field: "dataset", .. }));
        let e = resolve_dataset("mnist", 10, None, 0, None, None).unwrap_err();
        assert!(matches!(e, Error::Config { field: "images", .. }));
    }

    #[test]
    fn usage_errors_exit_2_and_help_exits_0() {
        assert_eq!(runv(&["naign", "no-such-command"]), 2);
        assert_eq!(runv(&["naign", "gen-data"]), 2, "missing --dataset");
        assert_eq!(runv(&["naign", "--help"]), 0);
        assert_eq!(runv(&["naign", "gen-data", "--help"]), 0);
    }

    #[test]
    fn gen_data_writes_csv_meta_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("g.csv");
        let code = runv(&[
            "naign",
            "gen-data",
            "--dataset",
            "grids",
            "--n",
            "50",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let ds = Dataset::load_csv(&out).unwrap();
        assert_eq!(ds.points.rows(), 50);
        assert_eq!(ds.mode_centers.as_ref().unwrap().rows(), 25);
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("g.manifest.json")).unwrap(),
        )
        .unwrap();
        let outputs = manifest["outputs"].as_array().unwrap();
        assert_eq!(outputs.len(), 2);
        // The recorded checksum matches the emitted file.
        let csv_bytes = std::fs::read(&out).unwrap();
        assert_eq!(
            outputs[0]["sha256"].as_str().unwrap(),
            sha256_hex(&csv_bytes)
        );
        assert_eq!(manifest["seed"].as_u64(), Some(7));
    }

    #[test]
    fn grad_check_passes_clean_and_fails_corrupted() {
        let dir = tempfile::tempdir().unwrap();
        let arch = parse_arch("2,6,2").unwrap();
        let params = init_mlp(&arch, 7000);
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
        let clean = grad_check_trial(&params, &mut rng, false);
        assert!(clean.iter().all(|&w| w <= 1e-4), "{clean:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
        let tainted = grad_check_trial(&params, &mut rng, true);
        assert!(tainted.iter().any(|&w| w > 1e-4), "{tainted:?}");

        let code = runv(&[
            "naign",
            "grad-check",
            "--arch",
            "2,6,2",
            "--trials",
            "3",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("grad_check.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report["pass"].as_bool(), Some(true));
        assert!(report["worst"]["imle"].as_f64().unwrap() <= 1e-4);
    }
}
