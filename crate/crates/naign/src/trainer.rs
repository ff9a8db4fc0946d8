//! Training loop: AdamW, the replay buffer for matched latent pairs,
//! per-method step functions, NDJSON logging, and binary checkpoints.
//!
//! A run is fully deterministic in (config, seed) at any fixed thread
//! count: batches come from one stream, everything a step draws
//! (candidate latents, the replay coin, buffer sampling) from another.

use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{sample_prior_rng, DatasetSpec, PriorSpec};
use crate::error::{Error, Result};
use crate::losses::{
    idem_into, ign_total, imle_paired_into, naign_total, rec_into, LossBreakdown, LossWeights,
    TermFlags,
};
use crate::net::{forward, init_mlp, GradientSet, MlpArch, MlpParams};
use crate::numerics::{Matrix, Metric};

/// Training objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// rec + IMLE + modified idempotence (all non-adversarial).
    Naign,
    /// Ablation: rec + IMLE only.
    NaignMinus,
    /// Adversarial baseline: rec + idem + tight.
    Ign,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Naign => "naign",
            Method::NaignMinus => "naign_minus",
            Method::Ign => "ign",
        }
    }

    /// Methods that run the candidate search and replay buffer.
    pub fn uses_imle(self) -> bool {
        matches!(self, Method::Naign | Method::NaignMinus)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "naign" => Ok(Method::Naign),
            "naign_minus" | "naign-minus" => Ok(Method::NaignMinus),
            "ign" => Ok(Method::Ign),
            other => Err(Error::InvalidArg(format!(
                "unknown method {other:?}, expected naign, naign_minus or ign"
            ))),
        }
    }
}

fn d_lr() -> f64 {
    1e-4
}
fn d_weight_decay() -> f64 {
    0.01
}
fn d_batch_size() -> usize {
    512
}
fn d_imle_m() -> usize {
    5120
}
fn d_steps() -> u64 {
    20_000
}
fn d_replay_prob() -> f64 {
    0.5
}
fn d_buffer_capacity() -> usize {
    10_000
}
fn d_log_every() -> u64 {
    100
}
fn d_eval_every() -> u64 {
    1000
}

/// Everything a run needs. Accepted as JSON with snake_case keys;
/// unspecified fields fall back to the defaults noted per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub dataset: DatasetSpec,
    pub arch: MlpArch,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub prior: PriorSpec,
    /// 1e-4
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// 0.01
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    /// 512
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    /// Candidates per IMLE search; 5120.
    #[serde(default = "d_imle_m")]
    pub imle_m: usize,
    /// 20000; 0 is a valid no-op run.
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// 0.5
    #[serde(default = "d_replay_prob")]
    pub replay_prob: f64,
    /// Stored (x, z*) pairs; 10000.
    #[serde(default = "d_buffer_capacity")]
    pub buffer_capacity: usize,
    /// Leading steps trained on reconstruction only; 0.
    #[serde(default)]
    pub warm_start_steps: u64,
    /// NDJSON record cadence; 100. 0 disables periodic records.
    #[serde(default = "d_log_every")]
    pub log_every: u64,
    /// Checkpoint cadence; 1000. 0 disables periodic checkpoints.
    #[serde(default = "d_eval_every")]
    pub eval_every: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, msg: String) -> Result<()> {
            Err(Error::Config { field, msg })
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be a positive finite number, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(
                "weight_decay",
                format!("must be non-negative, got {}", self.weight_decay),
            );
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.method.uses_imle() && self.imle_m < self.batch_size {
            return bad(
                "imle_m",
                format!(
                    "must be >= batch_size ({}) for {}, got {}",
                    self.batch_size,
                    self.method.name(),
                    self.imle_m
                ),
            );
        }
        if !(0.0..=1.0).contains(&self.replay_prob) {
            return bad(
                "replay_prob",
                format!("must be in [0, 1], got {}", self.replay_prob),
            );
        }
        if self.arch.dim == 0 {
            return bad("arch", "dim must be at least 1".into());
        }
        Ok(())
    }

    /// Reads and validates a JSON config file.
    pub fn from_json_file(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A config with every tunable at its default.
    pub fn new(method: Method, dataset: DatasetSpec, arch: MlpArch) -> TrainConfig {
        TrainConfig {
            method,
            dataset,
            arch,
            metric: Metric::default(),
            weights: LossWeights::default(),
            prior: PriorSpec::default(),
            lr: d_lr(),
            weight_decay: d_weight_decay(),
            batch_size: d_batch_size(),
            imle_m: d_imle_m(),
            steps: d_steps(),
            seed: 0,
            replay_prob: d_replay_prob(),
            buffer_capacity: d_buffer_capacity(),
            warm_start_steps: 0,
            log_every: d_log_every(),
            eval_every: d_eval_every(),
        }
    }
}

// ---- AdamW -----------------------------------------------------------------

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Decoupled-weight-decay Adam moments. Kept in f64; the parameters
/// themselves stay f32.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &MlpParams) -> Self {
        AdamWState {
            m: GradientSet::zeros_like(params),
            v: GradientSet::zeros_like(params),
            t: 0,
        }
    }
}

/// One update: m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2, then
/// theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + weight_decay theta).
/// Non-finite gradients leave params and moments untouched.
pub fn adamw_step(
    state: &mut AdamWState,
    params: &mut MlpParams,
    grads: &GradientSet,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient { step: state.t + 1 });
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    let update = |theta: &mut [f32], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..theta.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let th = theta[i] as f64;
            theta[i] = (th - lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * th)) as f32;
        }
    };
    for l in 0..params.weights.len() {
        update(
            &mut params.weights[l],
            &grads.weights[l],
            &mut state.m.weights[l],
            &mut state.v.weights[l],
        );
        update(
            &mut params.biases[l],
            &grads.biases[l],
            &mut state.m.biases[l],
            &mut state.v.biases[l],
        );
    }
    Ok(())
}

// ---- replay buffer ---------------------------------------------------------

/// FIFO store of matched (x, z*) pairs from past candidate searches.
/// Replaying them gives the IMLE term a single pre-matched candidate
/// per datum instead of a fresh M-way search.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: std::collections::VecDeque<(Vec<f64>, Vec<f64>)>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            entries: std::collections::VecDeque::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<(&[f64], &[f64])> {
        self.entries.get(i).map(|(x, z)| (x.as_slice(), z.as_slice()))
    }

    /// Appends one pair, evicting the oldest when full.
    pub fn push(&mut self, x: &[f64], z_star: &[f64]) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((x.to_vec(), z_star.to_vec()));
    }

    /// Draws `n` pairs: without replacement when the buffer holds at
    /// least `n`, with replacement otherwise. Empty buffer gives None.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Option<(Matrix, Matrix)> {
        if self.entries.is_empty() || n == 0 {
            return None;
        }
        let len = self.entries.len();
        let indices: Vec<usize> = if len >= n {
            let mut order: Vec<usize> = (0..len).collect();
            for t in 0..n {
                let j = rng.random_range(t..len);
                order.swap(t, j);
            }
            order.truncate(n);
            order
        } else {
            (0..n).map(|_| rng.random_range(0..len)).collect()
        };
        let dim = self.entries[0].0.len();
        let mut x = Matrix::zeros(n, dim);
        let mut z = Matrix::zeros(n, dim);
        for (row, &idx) in indices.iter().enumerate() {
            x.row_mut(row).copy_from_slice(&self.entries[idx].0);
            z.row_mut(row).copy_from_slice(&self.entries[idx].1);
        }
        Some((x, z))
    }
}

// ---- per-method steps --------------------------------------------------------

fn draw_prior(
    cfg: &TrainConfig,
    n: usize,
    reference: Option<&Matrix>,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    sample_prior_rng(cfg.prior, n, cfg.arch.dim, reference, rng)
}

/// One non-adversarial step on `x_batch`. With probability
/// `replay_prob` (and a non-empty buffer) the IMLE term runs on
/// buffered pairs; otherwise a fresh M-candidate search runs and its
/// matches are pushed. During the warm start only reconstruction is
/// active. `reference` feeds the spectrum-matched prior when configured.
pub fn train_step_naign(
    params: &mut MlpParams,
    state: &mut AdamWState,
    x_batch: &Matrix,
    cfg: &TrainConfig,
    buffer: &mut ReplayBuffer,
    rng: &mut ChaCha8Rng,
    step_index: u64,
    reference: Option<&Matrix>,
) -> Result<LossBreakdown> {
    // Drawn every step so the stream does not depend on buffer state.
    let coin: f64 = rng.random();
    let warm = step_index < cfg.warm_start_steps;
    let imle_active = !warm && cfg.weights.w_imle != 0.0;
    let idem_active =
        !warm && cfg.method == Method::Naign && cfg.weights.w_idem != 0.0;
    let replay = imle_active && coin < cfg.replay_prob && !buffer.is_empty();

    let bd;
    let grads;
    if replay {
        let (rx, rz) = buffer
            .sample(cfg.batch_size, rng)
            .expect("buffer checked non-empty");
        let mut g = GradientSet::zeros_like(params);
        let mut flags = TermFlags::default();
        let mut rec = 0.0;
        let mut idem = 0.0;
        if cfg.weights.w_rec != 0.0 {
            rec = rec_into(params, x_batch, cfg.metric, cfg.weights.w_rec, Some(&mut g));
            flags.rec = true;
        }
        let imle = imle_paired_into(params, &rx, &rz, cfg.metric, cfg.weights.w_imle, Some(&mut g));
        flags.imle = true;
        if idem_active {
            let z = draw_prior(cfg, cfg.batch_size, reference, rng)?;
            let zp = draw_prior(cfg, cfg.batch_size, reference, rng)?;
            idem = idem_into(params, &z, Some(&zp), cfg.metric, cfg.weights.w_idem, Some(&mut g));
            flags.idem = true;
        }
        let total =
            cfg.weights.w_rec * rec + cfg.weights.w_imle * imle + cfg.weights.w_idem * idem;
        bd = LossBreakdown {
            rec,
            imle,
            idem,
            tight: 0.0,
            total,
            matched_indices: None,
            grad_terms: flags,
        };
        grads = g;
    } else {
        let candidates = if imle_active {
            Some(draw_prior(cfg, cfg.imle_m, reference, rng)?)
        } else {
            None
        };
        let idem_batches = if idem_active {
            let z = draw_prior(cfg, cfg.batch_size, reference, rng)?;
            let zp = draw_prior(cfg, cfg.batch_size, reference, rng)?;
            Some((z, zp))
        } else {
            None
        };
        let mut weights = cfg.weights;
        if warm {
            weights.w_imle = 0.0;
            weights.w_idem = 0.0;
        }
        let empty = Matrix::zeros(0, cfg.arch.dim);
        let cand_ref = candidates.as_ref().unwrap_or(&empty);
        let (b, g) = naign_total(
            params,
            x_batch,
            cand_ref,
            idem_batches.as_ref().map(|(z, zp)| (z, zp)),
            &weights,
            cfg.metric,
        );
        if let (Some(cand), Some(idx)) = (&candidates, &b.matched_indices) {
            for (i, &j) in idx.iter().enumerate() {
                buffer.push(x_batch.row(i), cand.row(j));
            }
        }
        bd = b;
        grads = g;
    }

    if !bd.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: step_index + 1,
        });
    }
    adamw_step(state, params, &grads, cfg.lr, cfg.weight_decay)
        .map_err(|_| Error::NonFiniteGradient {
            step: step_index + 1,
        })?;
    Ok(bd)
}

/// One adversarial-baseline step: rec on `x_batch` plus idem and tight
/// on a fresh prior batch, with the warm start masking everything but
/// reconstruction.
pub fn train_step_ign(
    params: &mut MlpParams,
    state: &mut AdamWState,
    x_batch: &Matrix,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    step_index: u64,
    reference: Option<&Matrix>,
) -> Result<LossBreakdown> {
    let warm = step_index < cfg.warm_start_steps;
    let mut weights = cfg.weights;
    if warm {
        weights.w_idem = 0.0;
        weights.w_tight = 0.0;
    }
    let needs_prior = weights.w_idem != 0.0 || weights.w_tight != 0.0;
    let z = if needs_prior {
        draw_prior(cfg, cfg.batch_size, reference, rng)?
    } else {
        Matrix::zeros(0, cfg.arch.dim)
    };
    let (bd, grads) = ign_total(params, x_batch, &z, &weights, cfg.metric);
    if !bd.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: step_index + 1,
        });
    }
    adamw_step(state, params, &grads, cfg.lr, cfg.weight_decay)
        .map_err(|_| Error::NonFiniteGradient {
            step: step_index + 1,
        })?;
    Ok(bd)
}

// ---- data feed -----------------------------------------------------------

enum DataSource {
    /// Resampled fresh every batch.
    Synthetic(DatasetSpec),
    /// Fixed rows walked in shuffled-epoch order.
    Fixed {
        points: Matrix,
        order: Vec<usize>,
        pos: usize,
    },
}

impl DataSource {
    fn next_batch(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        match self {
            DataSource::Synthetic(spec) => spec
                .sample_batch(n, rng)
                .expect("synthetic spec always samples"),
            DataSource::Fixed { points, order, pos } => {
                let mut idx = Vec::with_capacity(n);
                for _ in 0..n {
                    if *pos == order.len() {
                        order.shuffle(rng);
                        *pos = 0;
                    }
                    idx.push(order[*pos]);
                    *pos += 1;
                }
                points.select_rows(&idx)
            }
        }
    }
}

// ---- trainer -----------------------------------------------------------------

/// Owns parameters, optimizer, data feed and RNG streams for one run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: MlpParams,
    pub opt: AdamWState,
    pub buffer: ReplayBuffer,
    /// Completed iterations (skipped ones included).
    pub step: u64,
    /// Iterations whose update was skipped for a non-finite gradient.
    pub skipped_steps: u64,
    data: DataSource,
    reference: Option<Matrix>,
    data_rng: ChaCha8Rng,
    step_rng: ChaCha8Rng,
}

/// At most this many rows feed the spectrum-matched prior's reference
/// amplitude estimate.
const PRIOR_REFERENCE_ROWS: usize = 256;

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let (data, reference) = if cfg.dataset.is_synthetic() {
            if cfg.arch.dim != 2 {
                return Err(Error::Config {
                    field: "arch",
                    msg: format!(
                        "dim {} does not match the 2-dimensional dataset",
                        cfg.arch.dim
                    ),
                });
            }
            (DataSource::Synthetic(cfg.dataset.clone()), None)
        } else {
            let ds = cfg.dataset.generate(0, cfg.seed)?;
            if ds.points.cols() != cfg.arch.dim {
                return Err(Error::Config {
                    field: "arch",
                    msg: format!(
                        "dim {} does not match dataset width {}",
                        cfg.arch.dim,
                        ds.points.cols()
                    ),
                });
            }
            if ds.points.rows() == 0 {
                return Err(Error::Config {
                    field: "dataset",
                    msg: "dataset is empty".into(),
                });
            }
            let rows = ds.points.rows().min(PRIOR_REFERENCE_ROWS);
            let reference = ds.points.select_rows(&(0..rows).collect::<Vec<_>>());
            let order: Vec<usize> = (0..ds.points.rows()).collect();
            (
                DataSource::Fixed {
                    points: ds.points,
                    order,
                    pos: usize::MAX, // forces a shuffle before the first batch
                },
                Some(reference),
            )
        };
        let mut data = data;
        if let DataSource::Fixed { order, pos, .. } = &mut data {
            *pos = order.len();
        }
        let params = init_mlp(&cfg.arch, cfg.seed);
        let opt = AdamWState::new(&params);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        data_rng.set_stream(1);
        let mut step_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        step_rng.set_stream(2);
        Ok(Trainer {
            cfg,
            params,
            opt,
            buffer,
            step: 0,
            skipped_steps: 0,
            data,
            reference,
            data_rng,
            step_rng,
        })
    }

    pub fn next_batch(&mut self) -> Matrix {
        self.data
            .next_batch(self.cfg.batch_size, &mut self.data_rng)
    }

    /// Runs one iteration. A non-finite-gradient error means the
    /// update was skipped but the iteration still counts; a
    /// non-finite-loss error means training cannot continue.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let x = self.next_batch();
        let idx = self.step;
        let r = match self.cfg.method {
            Method::Ign => train_step_ign(
                &mut self.params,
                &mut self.opt,
                &x,
                &self.cfg,
                &mut self.step_rng,
                idx,
                self.reference.as_ref(),
            ),
            Method::Naign | Method::NaignMinus => train_step_naign(
                &mut self.params,
                &mut self.opt,
                &x,
                &self.cfg,
                &mut self.buffer,
                &mut self.step_rng,
                idx,
                self.reference.as_ref(),
            ),
        };
        match r {
            Ok(bd) => {
                self.step += 1;
                Ok(bd)
            }
            Err(e @ Error::NonFiniteGradient { .. }) => {
                self.step += 1;
                self.skipped_steps += 1;
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    /// Deterministic generator samples: prior draws pushed through the
    /// current map. Uses a stream keyed off `seed2` so evaluation never
    /// perturbs the training streams.
    pub fn generate(&self, n: usize, seed2: u64) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ seed2);
        rng.set_stream(3);
        let z = draw_prior(&self.cfg, n, self.reference.as_ref(), &mut rng)?;
        Ok(forward(&self.params, &z))
    }

    pub fn reference(&self) -> Option<&Matrix> {
        self.reference.as_ref()
    }
}

// ---- run loop + NDJSON log ---------------------------------------------------

#[derive(Serialize)]
struct LogRecord {
    step: u64,
    rec: f64,
    imle: f64,
    idem: f64,
    tight: f64,
    total: f64,
    wall_ms: u64,
}

#[derive(Serialize)]
struct SkipRecord {
    step: u64,
    event: &'static str,
    skipped_total: u64,
    wall_ms: u64,
}

/// What `run_training` leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub steps_done: u64,
    pub skipped_steps: u64,
    pub final_loss: Option<LossBreakdown>,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

/// Trains for `cfg.steps` iterations. With an output directory this
/// writes `train_log.ndjson` (a record every `log_every` steps, plus
/// step 1), `checkpoint.naig` refreshed every `eval_every` steps and at
/// the end, and `config.json`. Skipped updates log a separate event
/// record. A non-finite loss aborts; checkpoints already on disk stay.
pub fn run_training(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut log: Option<std::fs::File> = None;
    let mut log_path = None;
    let mut ckpt_path = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.json");
        std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?)
            .map_err(|e| Error::io(&cfg_path, e))?;
        let lp = dir.join("train_log.ndjson");
        log = Some(std::fs::File::create(&lp).map_err(|e| Error::io(&lp, e))?);
        log_path = Some(lp);
        ckpt_path = Some(dir.join("checkpoint.naig"));
    }
    let started = Instant::now();
    let mut last = None;
    for s in 0..cfg.steps {
        match trainer.step() {
            Ok(bd) => {
                let step = s + 1;
                let due = cfg.log_every > 0 && step % cfg.log_every == 0;
                if (due || step == 1) && log.is_some() {
                    let rec = LogRecord {
                        step,
                        rec: bd.rec,
                        imle: bd.imle,
                        idem: bd.idem,
                        tight: bd.tight,
                        total: bd.total,
                        wall_ms: started.elapsed().as_millis() as u64,
                    };
                    write_ndjson(log.as_mut().unwrap(), &rec, log_path.as_deref())?;
                }
                last = Some(bd);
            }
            Err(Error::NonFiniteGradient { step }) => {
                if let Some(f) = log.as_mut() {
                    let rec = SkipRecord {
                        step,
                        event: "skipped_step",
                        skipped_total: trainer.skipped_steps,
                        wall_ms: started.elapsed().as_millis() as u64,
                    };
                    write_ndjson(f, &rec, log_path.as_deref())?;
                }
            }
            Err(e) => return Err(e),
        }
        if let Some(cp) = &ckpt_path {
            if cfg.eval_every > 0 && (s + 1) % cfg.eval_every == 0 {
                save_checkpoint(cp, &trainer.params, trainer.step, Some(cfg), Some(&trainer.opt))?;
            }
        }
    }
    if let Some(cp) = &ckpt_path {
        save_checkpoint(cp, &trainer.params, trainer.step, Some(cfg), Some(&trainer.opt))?;
    }
    Ok(TrainOutcome {
        params: trainer.params,
        steps_done: trainer.step,
        skipped_steps: trainer.skipped_steps,
        final_loss: last,
        checkpoint_path: ckpt_path,
        log_path,
    })
}

fn write_ndjson<T: Serialize>(f: &mut std::fs::File, rec: &T, path: Option<&Path>) -> Result<()> {
    let mut line = serde_json::to_string(rec)?;
    line.push('\n');
    f.write_all(line.as_bytes())
        .map_err(|e| Error::io(path.unwrap_or(Path::new("train_log.ndjson")), e))
}

// ---- checkpoints ---------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"NAIG";
const CKPT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    /// Byte offset into the blob.
    offset: u64,
    /// Element count (4 bytes each).
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: MlpArch,
    step: u64,
    config: Option<TrainConfig>,
    opt_t: Option<u64>,
    tensors: Vec<TensorInfo>,
}

/// A loaded checkpoint. Optimizer moments are stored in 32-bit
/// precision, so a resumed run is statistically but not bitwise
/// identical to an uninterrupted one.
#[derive(Debug)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub step: u64,
    pub config: Option<TrainConfig>,
    pub opt: Option<AdamWState>,
}

/// Layout: 4-byte magic "NAIG", version byte, little-endian u32 header
/// length, JSON header (arch, config, step, tensor manifest with byte
/// offsets), then all tensors as raw little-endian f32. The write is
/// atomic (temp file + rename).
pub fn save_checkpoint(
    path: &Path,
    params: &MlpParams,
    step: u64,
    config: Option<&TrainConfig>,
    opt: Option<&AdamWState>,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let push_f32 = |name: String, vals: &[f32], tensors: &mut Vec<TensorInfo>, blob: &mut Vec<u8>| {
        tensors.push(TensorInfo {
            name,
            offset: blob.len() as u64,
            len: vals.len() as u64,
        });
        for v in vals {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (l, w) in params.weights.iter().enumerate() {
        push_f32(format!("weights.{l}"), w, &mut tensors, &mut blob);
    }
    for (l, b) in params.biases.iter().enumerate() {
        push_f32(format!("biases.{l}"), b, &mut tensors, &mut blob);
    }
    if let Some(opt) = opt {
        let as_f32 = |t: &[f64]| t.iter().map(|&v| v as f32).collect::<Vec<f32>>();
        for (prefix, gs) in [("adam.m", &opt.m), ("adam.v", &opt.v)] {
            for (l, w) in gs.weights.iter().enumerate() {
                push_f32(format!("{prefix}.weights.{l}"), &as_f32(w), &mut tensors, &mut blob);
            }
            for (l, b) in gs.biases.iter().enumerate() {
                push_f32(format!("{prefix}.biases.{l}"), &as_f32(b), &mut tensors, &mut blob);
            }
        }
    }
    let header = CheckpointHeader {
        arch: params.arch.clone(),
        step,
        config: config.cloned(),
        opt_t: opt.map(|o| o.t),
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(9 + header_json.len() + blob.len());
    bytes.extend_from_slice(CKPT_MAGIC);
    bytes.push(CKPT_VERSION);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&blob);
    let tmp = path.with_extension("naig.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 9 {
        return Err(Error::Format("checkpoint shorter than its header".into()));
    }
    if &bytes[0..4] != CKPT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, want {:?}",
            &bytes[0..4],
            CKPT_MAGIC
        )));
    }
    if bytes[4] != CKPT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}, want {CKPT_VERSION}",
            bytes[4]
        )));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let blob_start = 9 + header_len;
    if bytes.len() < blob_start {
        return Err(Error::Format(format!(
            "declared header length {header_len} exceeds file size {}",
            bytes.len()
        )));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[9..blob_start])?;
    let blob = &bytes[blob_start..];

    // Validate the manifest: contiguous offsets covering the blob exactly.
    let mut expected_offset = 0u64;
    for t in &header.tensors {
        if t.offset != expected_offset {
            return Err(Error::Format(format!(
                "tensor {} at offset {}, expected {expected_offset}",
                t.name, t.offset
            )));
        }
        expected_offset += t.len * 4;
    }
    if expected_offset != blob.len() as u64 {
        return Err(Error::Format(format!(
            "manifest covers {expected_offset} bytes, blob has {}",
            blob.len()
        )));
    }

    let read_tensor = |name: &str| -> Result<Vec<f32>> {
        let info = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {name}")))?;
        let start = info.offset as usize;
        let end = start + info.len as usize * 4;
        Ok(blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let layer_dims = header.arch.layer_dims();
    let mut weights = Vec::with_capacity(layer_dims.len());
    let mut biases = Vec::with_capacity(layer_dims.len());
    for (l, &(fan_in, fan_out)) in layer_dims.iter().enumerate() {
        let w = read_tensor(&format!("weights.{l}"))?;
        if w.len() != fan_in * fan_out {
            return Err(Error::Format(format!(
                "weights.{l} has {} values, arch wants {}",
                w.len(),
                fan_in * fan_out
            )));
        }
        let b = read_tensor(&format!("biases.{l}"))?;
        if b.len() != fan_out {
            return Err(Error::Format(format!(
                "biases.{l} has {} values, arch wants {fan_out}",
                b.len()
            )));
        }
        weights.push(w);
        biases.push(b);
    }
    let params = MlpParams {
        arch: header.arch.clone(),
        weights,
        biases,
    };

    let opt = if header.tensors.iter().any(|t| t.name.starts_with("adam.")) {
        let as_f64 = |v: Vec<f32>| v.into_iter().map(|x| x as f64).collect::<Vec<f64>>();
        let read_set = |prefix: &str| -> Result<GradientSet> {
            let mut w = Vec::new();
            let mut b = Vec::new();
            for l in 0..layer_dims.len() {
                w.push(as_f64(read_tensor(&format!("{prefix}.weights.{l}"))?));
                b.push(as_f64(read_tensor(&format!("{prefix}.biases.{l}"))?));
            }
            Ok(GradientSet {
                weights: w,
                biases: b,
            })
        };
        Some(AdamWState {
            m: read_set("adam.m")?,
            v: read_set("adam.v")?,
            t: header.opt_t.unwrap_or(0),
        })
    } else {
        None
    };

    Ok(Checkpoint {
        params,
        step: header.step,
        config: header.config,
        opt,
    })
}
