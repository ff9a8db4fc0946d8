//! Training objectives.
//!
//! Two recipes share these terms:
//!
//! * `naign`: reconstruction + nearest-candidate matching (IMLE) +
//!   a modified idempotence term evaluated on both prior samples and
//!   freshly generated points. No adversarial tightness term.
//! * `ign`: reconstruction + idempotence + negated tightness, the
//!   adversarial baseline.
//!
//! Stop-gradient conventions, which several tests pin down exactly:
//!
//! * idem: `mean d(f(z), f_frozen(f(z)))`. The outer application uses a
//!   frozen parameter copy; gradients flow into its *input* (and the
//!   first argument) but never into parameters through the outer pass.
//! * tight: `-mean d(f_frozen(z), f(f_frozen(z)))`. The inner
//!   application is fully detached; gradients flow only through the
//!   outer application. The value is never positive.
//! * imle: `mean_i min_j d(x_i, f(z_j))`, ties to the lowest candidate
//!   index, gradient only through each datum's selected candidate.
//!   Candidates are forwarded exactly once; the backward pass gathers
//!   the selected cache rows instead of recomputing.

use serde::{Deserialize, Serialize};

use crate::net::{backward, forward, forward_cached, GradientSet, MlpParams};
use crate::numerics::{distance, nearest_point, Matrix, Metric};

/// Per-term weights. `w_tight` only participates in `ign_total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_imle: f64,
    pub w_idem: f64,
    pub w_tight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_rec: 1.0,
            w_imle: 1.0,
            w_idem: 1.0,
            w_tight: 0.1,
        }
    }
}

/// Which terms contributed gradients to the step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermFlags {
    pub rec: bool,
    pub imle: bool,
    pub idem: bool,
    pub tight: bool,
}

/// Per-term values (unweighted), the weighted total, and for IMLE the
/// selected candidate index per datum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub imle: f64,
    pub idem: f64,
    pub tight: f64,
    pub total: f64,
    pub matched_indices: Option<Vec<usize>>,
    pub grad_terms: TermFlags,
}

/// `sum_i d(a_i, b_i) / n`, summed in ascending row order.
fn mean_rowwise_distance(a: &Matrix, b: &Matrix, metric: Metric) -> f64 {
    debug_assert_eq!(a.rows(), b.rows());
    let mut sum = 0.0;
    for i in 0..a.rows() {
        sum += distance(metric, a.row(i), b.row(i));
    }
    sum / a.rows() as f64
}

/// Adds `scale * d d(a,b)/d b` into `out`. `dist` must be the already
/// computed `distance(metric, a, b)` (needed for the L2 normalisation;
/// at distance zero the subgradient 0 is used).
fn add_distance_grad_wrt_b(
    metric: Metric,
    a: &[f64],
    b: &[f64],
    dist: f64,
    scale: f64,
    out: &mut [f64],
) {
    match metric {
        Metric::L1 => {
            for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                let d = y - x;
                if d > 0.0 {
                    *o += scale;
                } else if d < 0.0 {
                    *o -= scale;
                }
            }
        }
        Metric::L2 => {
            if dist > 0.0 {
                let s = scale / dist;
                for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                    *o += s * (y - x);
                }
            }
        }
        Metric::L2Squared => {
            for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                *o += scale * 2.0 * (y - x);
            }
        }
    }
}

// ---- value-only evaluators over arbitrary maps --------------------------
//
// These take any `R^D -> R^D` map, so exactly idempotent reference maps
// (e.g. an analytic projector) can be pushed through the same reduction
// code that the trainable losses use.

pub fn rec_value(f: impl Fn(&Matrix) -> Matrix, x: &Matrix, metric: Metric) -> f64 {
    mean_rowwise_distance(x, &f(x), metric)
}

pub fn idem_value(
    f: impl Fn(&Matrix) -> Matrix,
    z: &Matrix,
    gen_from: Option<&Matrix>,
    metric: Metric,
) -> f64 {
    let base = |batch: &Matrix| {
        let y = f(batch);
        let w = f(&y);
        mean_rowwise_distance(&y, &w, metric)
    };
    match gen_from {
        None => base(z),
        Some(zp) => {
            let q = f(zp);
            0.5 * (base(z) + base(&q))
        }
    }
}

pub fn tight_value(f: impl Fn(&Matrix) -> Matrix, z: &Matrix, metric: Metric) -> f64 {
    let a = f(z);
    let b = f(&a);
    -mean_rowwise_distance(&a, &b, metric)
}

pub fn imle_value(
    f: impl Fn(&Matrix) -> Matrix,
    x: &Matrix,
    candidates: &Matrix,
    metric: Metric,
) -> (f64, Vec<usize>) {
    let y = f(candidates);
    let mut sum = 0.0;
    let mut indices = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let (j, d) = nearest_point(metric, x.row(i), &y);
        sum += d;
        indices.push(j);
    }
    (sum / x.rows() as f64, indices)
}

/// `sum_a min_b d(a, b)`: per-row minima in candidate order, summed in
/// ascending row order. No normalisation, no gradient. The IMLE value
/// equals `chamfer_one_sided(x, f(candidates)) / n` bitwise because both
/// run this exact reduction.
pub fn chamfer_one_sided(a: &Matrix, b: &Matrix, metric: Metric) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.rows() {
        sum += nearest_point(metric, a.row(i), b).1;
    }
    sum
}

// ---- trainable losses ----------------------------------------------------

/// `mean_i d(x_i, f(x_i))`. Gradient scaled by `scale` is added to `sink`.
pub(crate) fn rec_into(
    params: &MlpParams,
    x: &Matrix,
    metric: Metric,
    scale: f64,
    sink: Option<&mut GradientSet>,
) -> f64 {
    let n = x.rows();
    let (y, cache) = forward_cached(params, x);
    let mut sum = 0.0;
    let mut cot = Matrix::zeros(n, y.cols());
    for i in 0..n {
        let d = distance(metric, x.row(i), y.row(i));
        sum += d;
        add_distance_grad_wrt_b(
            metric,
            x.row(i),
            y.row(i),
            d,
            scale / n as f64,
            cot.row_mut(i),
        );
    }
    if let Some(g) = sink {
        backward(&cache, &cot, Some(g));
    }
    sum / n as f64
}

/// Reconstruction loss with gradients: data should be fixed points.
pub fn rec_loss(params: &MlpParams, x: &Matrix, metric: Metric) -> (f64, GradientSet) {
    let mut grads = GradientSet::zeros_like(params);
    let v = rec_into(params, x, metric, 1.0, Some(&mut grads));
    (v, grads)
}

/// One idempotence term on `batch`: `mean d(y, f_frozen(y))` with
/// `y = f(batch)`. Gradient reaches parameters only through the live
/// inner pass; the outer pass runs on a frozen copy, propagating input
/// gradients but no parameter gradients.
fn idem_term_into(
    params: &MlpParams,
    batch: &Matrix,
    metric: Metric,
    scale: f64,
    sink: &mut Option<&mut GradientSet>,
) -> f64 {
    let n = batch.rows();
    let (y, live_cache) = forward_cached(params, batch);
    let (w, frozen_cache) = forward_cached(params, &y);
    let mut sum = 0.0;
    let mut cot_w = Matrix::zeros(n, w.cols());
    let mut cot_y = Matrix::zeros(n, y.cols());
    for i in 0..n {
        let d = distance(metric, y.row(i), w.row(i));
        sum += d;
        let s = scale / n as f64;
        // d(y, w): gradient w.r.t. w, and directly w.r.t. y (first slot).
        add_distance_grad_wrt_b(metric, y.row(i), w.row(i), d, s, cot_w.row_mut(i));
        add_distance_grad_wrt_b(metric, w.row(i), y.row(i), d, s, cot_y.row_mut(i));
    }
    if let Some(g) = sink.as_deref_mut() {
        // Input gradient through the frozen outer pass joins the direct path.
        let through_outer = backward(&frozen_cache, &cot_w, None);
        for (a, &b) in cot_y.data_mut().iter_mut().zip(through_outer.data()) {
            *a += b;
        }
        backward(&live_cache, &cot_y, Some(g));
    }
    sum / n as f64
}

pub(crate) fn idem_into(
    params: &MlpParams,
    z: &Matrix,
    gen_from: Option<&Matrix>,
    metric: Metric,
    scale: f64,
    mut sink: Option<&mut GradientSet>,
) -> f64 {
    match gen_from {
        None => idem_term_into(params, z, metric, scale, &mut sink),
        Some(zp) => {
            // Generated points come from a detached pass: constants here.
            let q = forward(params, zp);
            let a = idem_term_into(params, z, metric, 0.5 * scale, &mut sink);
            let b = idem_term_into(params, &q, metric, 0.5 * scale, &mut sink);
            0.5 * (a + b)
        }
    }
}

/// Idempotence loss. With `gen_from: Some(z')` the term is the average
/// of the base term on `z` and the same term on generated points
/// `q = f_frozen(z')` (fresh prior samples pushed through a detached
/// pass).
pub fn idem_loss(
    params: &MlpParams,
    z: &Matrix,
    gen_from: Option<&Matrix>,
    metric: Metric,
) -> (f64, GradientSet) {
    let mut grads = GradientSet::zeros_like(params);
    let v = idem_into(params, z, gen_from, metric, 1.0, Some(&mut grads));
    (v, grads)
}

pub(crate) fn tight_into(
    params: &MlpParams,
    z: &Matrix,
    metric: Metric,
    scale: f64,
    sink: Option<&mut GradientSet>,
) -> f64 {
    let n = z.rows();
    let a = forward(params, z); // detached inner pass: plain constants
    let (b, cache) = forward_cached(params, &a);
    let mut sum = 0.0;
    let mut cot = Matrix::zeros(n, b.cols());
    for i in 0..n {
        let d = distance(metric, a.row(i), b.row(i));
        sum += d;
        add_distance_grad_wrt_b(
            metric,
            a.row(i),
            b.row(i),
            d,
            -scale / n as f64,
            cot.row_mut(i),
        );
    }
    if let Some(g) = sink {
        backward(&cache, &cot, Some(g));
    }
    -(sum / n as f64)
}

/// Tightness loss `-mean d(f_frozen(z), f(f_frozen(z)))`: pushes the
/// second application away from the first, opposing idem. Value <= 0.
pub fn tight_loss(params: &MlpParams, z: &Matrix, metric: Metric) -> (f64, GradientSet) {
    let mut grads = GradientSet::zeros_like(params);
    let v = tight_into(params, z, metric, 1.0, Some(&mut grads));
    (v, grads)
}

pub(crate) fn imle_into(
    params: &MlpParams,
    x: &Matrix,
    candidates: &Matrix,
    metric: Metric,
    scale: f64,
    sink: Option<&mut GradientSet>,
) -> (f64, Vec<usize>) {
    let n = x.rows();
    let (y, cache) = forward_cached(params, candidates);
    let mut sum = 0.0;
    let mut indices = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for i in 0..n {
        let (j, d) = nearest_point(metric, x.row(i), &y);
        sum += d;
        indices.push(j);
        dists.push(d);
    }
    if let Some(g) = sink {
        // Gather the selected candidates (deduplicated, ascending) and
        // backprop just those cache rows; candidates were forwarded once.
        let mut selected: Vec<usize> = indices.clone();
        selected.sort_unstable();
        selected.dedup();
        let slot = |j: usize| selected.binary_search(&j).unwrap();
        let mut cot = Matrix::zeros(selected.len(), y.cols());
        for i in 0..n {
            let j = indices[i];
            add_distance_grad_wrt_b(
                metric,
                x.row(i),
                y.row(j),
                dists[i],
                scale / n as f64,
                cot.row_mut(slot(j)),
            );
        }
        let sub_cache = cache.select_rows(&selected);
        backward(&sub_cache, &cot, Some(g));
    }
    (sum / n as f64, indices)
}

/// Nearest-candidate matching loss: `mean_i min_j d(x_i, f(z_j))`.
/// Ties break to the lowest candidate index. Equals
/// `chamfer_one_sided(x, f(candidates)) / n` bitwise.
pub fn imle_loss(
    params: &MlpParams,
    x: &Matrix,
    candidates: &Matrix,
    metric: Metric,
) -> (f64, Vec<usize>, GradientSet) {
    let mut grads = GradientSet::zeros_like(params);
    let (v, idx) = imle_into(params, x, candidates, metric, 1.0, Some(&mut grads));
    (v, idx, grads)
}

pub(crate) fn imle_paired_into(
    params: &MlpParams,
    x: &Matrix,
    z_star: &Matrix,
    metric: Metric,
    scale: f64,
    sink: Option<&mut GradientSet>,
) -> f64 {
    debug_assert_eq!(x.rows(), z_star.rows());
    let n = x.rows();
    let (y, cache) = forward_cached(params, z_star);
    let mut sum = 0.0;
    let mut cot = Matrix::zeros(n, y.cols());
    for i in 0..n {
        let d = distance(metric, x.row(i), y.row(i));
        sum += d;
        add_distance_grad_wrt_b(
            metric,
            x.row(i),
            y.row(i),
            d,
            scale / n as f64,
            cot.row_mut(i),
        );
    }
    if let Some(g) = sink {
        backward(&cache, &cot, Some(g));
    }
    sum / n as f64
}

/// IMLE with one fixed candidate per datum: `mean_i d(x_i, f(z*_i))`.
/// This is the replay-buffer path, where each datum reuses its stored
/// matched latent.
pub fn imle_paired(
    params: &MlpParams,
    x: &Matrix,
    z_star: &Matrix,
    metric: Metric,
) -> (f64, GradientSet) {
    let mut grads = GradientSet::zeros_like(params);
    let v = imle_paired_into(params, x, z_star, metric, 1.0, Some(&mut grads));
    (v, grads)
}

/// Adversarial baseline objective on one data batch and one prior batch:
/// `w_rec*rec + w_idem*idem + w_tight*tight`. Zero-weighted terms are
/// skipped entirely (reported as 0, no gradient).
pub fn ign_total(
    params: &MlpParams,
    x: &Matrix,
    z: &Matrix,
    weights: &LossWeights,
    metric: Metric,
) -> (LossBreakdown, GradientSet) {
    let mut grads = GradientSet::zeros_like(params);
    let mut flags = TermFlags::default();
    let mut rec = 0.0;
    let mut idem = 0.0;
    let mut tight = 0.0;
    if weights.w_rec != 0.0 {
        rec = rec_into(params, x, metric, weights.w_rec, Some(&mut grads));
        flags.rec = true;
    }
    if weights.w_idem != 0.0 {
        idem = idem_into(params, z, None, metric, weights.w_idem, Some(&mut grads));
        flags.idem = true;
    }
    if weights.w_tight != 0.0 {
        tight = tight_into(params, z, metric, weights.w_tight, Some(&mut grads));
        flags.tight = true;
    }
    let total = weights.w_rec * rec + weights.w_idem * idem + weights.w_tight * tight;
    (
        LossBreakdown {
            rec,
            imle: 0.0,
            idem,
            tight,
            total,
            matched_indices: None,
            grad_terms: flags,
        },
        grads,
    )
}

/// Non-adversarial objective: `w_rec*rec + w_imle*imle + w_idem*idem`
/// with the modified idempotence term. `idem_batches` carries the fresh
/// prior batch and the batch feeding the detached generated points;
/// `None` is the ablation without the idem term, which is then reported
/// as 0 and contributes no gradient.
pub fn naign_total(
    params: &MlpParams,
    x: &Matrix,
    candidates: &Matrix,
    idem_batches: Option<(&Matrix, &Matrix)>,
    weights: &LossWeights,
    metric: Metric,
) -> (LossBreakdown, GradientSet) {
    let mut grads = GradientSet::zeros_like(params);
    let mut flags = TermFlags::default();
    let mut rec = 0.0;
    let mut imle = 0.0;
    let mut idem = 0.0;
    let mut matched = None;
    if weights.w_rec != 0.0 {
        rec = rec_into(params, x, metric, weights.w_rec, Some(&mut grads));
        flags.rec = true;
    }
    if weights.w_imle != 0.0 {
        let (v, idx) = imle_into(params, x, candidates, metric, weights.w_imle, Some(&mut grads));
        imle = v;
        matched = Some(idx);
        flags.imle = true;
    }
    if let Some((z, zp)) = idem_batches {
        if weights.w_idem != 0.0 {
            idem = idem_into(params, z, Some(zp), metric, weights.w_idem, Some(&mut grads));
            flags.idem = true;
        }
    }
    let total = weights.w_rec * rec + weights.w_imle * imle + weights.w_idem * idem;
    (
        LossBreakdown {
            rec,
            imle,
            idem,
            tight: 0.0,
            total,
            matched_indices: matched,
            grad_terms: flags,
        },
        grads,
    )
}
