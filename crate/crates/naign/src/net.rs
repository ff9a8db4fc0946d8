//! The model: an MLP `f: R^D -> R^D` with exact reverse-mode gradients.
//!
//! Parameters are stored in f32; every forward and backward pass lifts
//! them to f64 and accumulates in f64, so analytic gradients can be
//! checked against central finite differences at 1e-4 relative
//! tolerance. A backward pass takes an optional gradient sink: passing
//! `None` is how callers run a detached (stop-gradient) application that
//! contributes nothing to parameter gradients while still propagating
//! input gradients.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

/// Network shape. `dim` is both input and output width. With
/// `residual_output` the network computes `x + net(x)` so the identity
/// map is the zero-parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub residual_output: bool,
}

impl MlpArch {
    pub fn new(dim: usize, hidden: Vec<usize>) -> Self {
        MlpArch {
            dim,
            hidden,
            activation: Activation::default(),
            residual_output: false,
        }
    }

    /// Layer widths including input and output: `[dim, hidden..., dim]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.dim);
        w
    }

    /// `(fan_in, fan_out)` per linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

/// Model parameters. `weights[l]` is row-major `(fan_in x fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub arch: MlpArch,
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
}

/// One f64 tensor per parameter tensor, same shapes as [`MlpParams`].
/// Backward passes add into it, so one set can accumulate several
/// weighted loss terms before an optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &MlpParams) -> Self {
        GradientSet {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += scale * other`, entry by entry.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|t| t.iter())
    }
}

/// He-style uniform init: weights from U[-sqrt(6/fan_in), sqrt(6/fan_in)]
/// (variance 2/fan_in), biases zero. Deterministic in `seed`.
pub fn init_mlp(arch: &MlpArch, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (fan_in, fan_out) in arch.layer_dims() {
        let limit = (6.0 / fan_in as f64).sqrt();
        let w: Vec<f32> = (0..fan_in * fan_out)
            .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * limit) as f32)
            .collect();
        weights.push(w);
        biases.push(vec![0.0f32; fan_out]);
    }
    MlpParams {
        arch: arch.clone(),
        weights,
        biases,
    }
}

struct LiftedLayer {
    w: Matrix,   // fan_in x fan_out
    b: Vec<f64>, // fan_out
}

fn lift(params: &MlpParams) -> Vec<LiftedLayer> {
    params
        .arch
        .layer_dims()
        .iter()
        .zip(params.weights.iter().zip(&params.biases))
        .map(|(&(fi, fo), (w, b))| LiftedLayer {
            w: Matrix::from_vec(fi, fo, w.iter().map(|&v| v as f64).collect()),
            b: b.iter().map(|&v| v as f64).collect(),
        })
        .collect()
}

/// Saved activations from [`forward_cached`], consumed by [`backward`].
/// Holds the f64 lift of the parameters too, so forward and backward of
/// one pass see bit-identical weights.
pub struct ForwardCache {
    layers: Vec<LiftedLayer>,
    /// acts[0] is the input batch; acts[l+1] the post-activation output
    /// of layer l (for the last layer: its linear output).
    acts: Vec<Matrix>,
    /// Pre-activations per hidden layer (unused for tanh, which reuses
    /// the stored activation).
    pres: Vec<Matrix>,
    activation: Activation,
    residual: bool,
}

impl ForwardCache {
    /// Cache restricted to the given batch rows. Each row's activations
    /// are independent, so backward through the selection is bitwise
    /// identical to a fresh forward-backward of just those rows.
    pub fn select_rows(&self, indices: &[usize]) -> ForwardCache {
        ForwardCache {
            layers: self
                .layers
                .iter()
                .map(|l| LiftedLayer {
                    w: l.w.clone(),
                    b: l.b.clone(),
                })
                .collect(),
            acts: self.acts.iter().map(|m| m.select_rows(indices)).collect(),
            pres: self.pres.iter().map(|m| m.select_rows(indices)).collect(),
            activation: self.activation,
            residual: self.residual,
        }
    }
}

fn affine(x: &Matrix, layer: &LiftedLayer) -> Matrix {
    let mut out = x.matmul(&layer.w);
    let fo = layer.b.len();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for j in 0..fo {
            row[j] += layer.b[j];
        }
    }
    out
}

fn run_forward(params: &MlpParams, batch: &Matrix, keep: bool) -> (Matrix, Option<ForwardCache>) {
    assert_eq!(
        batch.cols(),
        params.arch.dim,
        "batch width must match model dim"
    );
    let layers = lift(params);
    let n_layers = layers.len();
    let mut acts: Vec<Matrix> = Vec::with_capacity(if keep { n_layers + 1 } else { 0 });
    let mut pres: Vec<Matrix> = Vec::with_capacity(if keep { n_layers - 1 } else { 0 });
    let mut cur = batch.clone();
    if keep {
        acts.push(cur.clone());
    }
    for (l, layer) in layers.iter().enumerate() {
        let mut pre = affine(&cur, layer);
        if l + 1 < n_layers {
            if keep {
                pres.push(pre.clone());
            }
            match params.arch.activation {
                Activation::LeakyRelu { slope } => {
                    for v in pre.data_mut() {
                        if *v < 0.0 {
                            *v *= slope;
                        }
                    }
                }
                Activation::Tanh => {
                    for v in pre.data_mut() {
                        *v = v.tanh();
                    }
                }
            }
        }
        cur = pre;
        if keep {
            acts.push(cur.clone());
        }
    }
    if params.arch.residual_output {
        for (v, x) in cur.data_mut().iter_mut().zip(batch.data()) {
            *v += x;
        }
        if keep {
            *acts.last_mut().unwrap() = cur.clone();
        }
    }
    let cache = if keep {
        Some(ForwardCache {
            layers,
            acts,
            pres,
            activation: params.arch.activation,
            residual: params.arch.residual_output,
        })
    } else {
        None
    };
    (cur, cache)
}

/// Applies the model to a batch (rows are samples).
pub fn forward(params: &MlpParams, batch: &Matrix) -> Matrix {
    run_forward(params, batch, false).0
}

/// Forward pass that keeps what [`backward`] needs.
pub fn forward_cached(params: &MlpParams, batch: &Matrix) -> (Matrix, ForwardCache) {
    let (out, cache) = run_forward(params, batch, true);
    (out, cache.unwrap())
}

/// Reverse pass. `out_grad` is dL/d(output); returns dL/d(input).
/// Parameter gradients are **added** into `grads`; passing `None` makes
/// this a detached application that touches no parameter gradient.
pub fn backward(cache: &ForwardCache, out_grad: &Matrix, mut grads: Option<&mut GradientSet>) -> Matrix {
    let n_layers = cache.layers.len();
    let batch = &cache.acts[0];
    assert_eq!(out_grad.rows(), batch.rows());
    let mut d_cur = out_grad.clone();
    for l in (0..n_layers).rev() {
        if l + 1 < n_layers {
            // Undo the activation: d_pre = d_act * act'(pre).
            match cache.activation {
                Activation::LeakyRelu { slope } => {
                    let pre = &cache.pres[l];
                    for (v, &p) in d_cur.data_mut().iter_mut().zip(pre.data()) {
                        if p <= 0.0 {
                            *v *= slope;
                        }
                    }
                }
                Activation::Tanh => {
                    let act = &cache.acts[l + 1];
                    for (v, &a) in d_cur.data_mut().iter_mut().zip(act.data()) {
                        *v *= 1.0 - a * a;
                    }
                }
            }
        }
        let input = &cache.acts[l];
        if let Some(g) = grads.as_deref_mut() {
            accumulate_layer_grads(input, &d_cur, &mut g.weights[l], &mut g.biases[l]);
        }
        d_cur = d_cur.matmul_bt(&cache.layers[l].w);
    }
    if cache.residual {
        for (v, &g) in d_cur.data_mut().iter_mut().zip(out_grad.data()) {
            *v += g;
        }
    }
    d_cur
}

/// dW[k,j] += sum_i input[i,k] * d_pre[i,j]; db[j] += sum_i d_pre[i,j].
/// The sum over i runs in ascending order for every entry, so results do
/// not depend on the worker count.
fn accumulate_layer_grads(input: &Matrix, d_pre: &Matrix, dw: &mut [f64], db: &mut [f64]) {
    let (n, fi, fo) = (input.rows(), input.cols(), d_pre.cols());
    crate::threads::for_each_row(dw, fo, |k, row| {
        for i in 0..n {
            let x = input.get(i, k);
            if x != 0.0 {
                for (r, &g) in row.iter_mut().zip(d_pre.row(i)) {
                    *r += x * g;
                }
            }
        }
    });
    debug_assert_eq!(dw.len(), fi * fo);
    for i in 0..n {
        for (b, &g) in db.iter_mut().zip(d_pre.row(i)) {
            *b += g;
        }
    }
}

/// Forward plus parameter gradients of `<output, out_grad>` in one call.
pub fn forward_backward(
    params: &MlpParams,
    batch: &Matrix,
    out_grad: &Matrix,
) -> (Matrix, GradientSet) {
    let (out, cache) = forward_cached(params, batch);
    let mut grads = GradientSet::zeros_like(params);
    backward(&cache, out_grad, Some(&mut grads));
    (out, grads)
}

/// Central-difference gradient of an arbitrary scalar function of the
/// parameters. Each f32 slot is nudged to `f32(w +- h)` and the quotient
/// uses the exactly-representable spread, which keeps the estimate
/// accurate even though parameters are stored in f32.
pub fn finite_diff_grads(
    params: &MlpParams,
    f: impl Fn(&MlpParams) -> f64,
    h: f64,
) -> GradientSet {
    let mut work = params.clone();
    let mut grads = GradientSet::zeros_like(params);
    for l in 0..work.weights.len() {
        for s in 0..work.weights[l].len() {
            let w = params.weights[l][s];
            grads.weights[l][s] = central_diff(&mut work, &f, h, w, |p, v| p.weights[l][s] = v);
        }
        for s in 0..work.biases[l].len() {
            let b = params.biases[l][s];
            grads.biases[l][s] = central_diff(&mut work, &f, h, b, |p, v| p.biases[l][s] = v);
        }
    }
    grads
}

fn central_diff(
    work: &mut MlpParams,
    f: &impl Fn(&MlpParams) -> f64,
    h: f64,
    w: f32,
    set: impl Fn(&mut MlpParams, f32),
) -> f64 {
    let wp = (w as f64 + h) as f32;
    let wm = (w as f64 - h) as f32;
    let spread = wp as f64 - wm as f64;
    if spread == 0.0 {
        return 0.0;
    }
    set(work, wp);
    let lp = f(work);
    set(work, wm);
    let lm = f(work);
    set(work, w);
    (lp - lm) / spread
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch(activation: Activation, residual: bool) -> MlpArch {
        MlpArch {
            dim: 2,
            hidden: vec![8, 8],
            activation,
            residual_output: residual,
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        let mut m = Matrix::zeros(n, d);
        for v in m.data_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        m
    }

    #[test]
    fn init_is_seed_deterministic() {
        let arch = small_arch(Activation::default(), false);
        let a = init_mlp(&arch, 42);
        let b = init_mlp(&arch, 42);
        let c = init_mlp(&arch, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_variance_matches_fan_in_rule() {
        let arch = MlpArch::new(2, vec![512, 512]);
        let p = init_mlp(&arch, 0);
        // Layer 1 has fan_in 512.
        let w = &p.weights[1];
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let var = w
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / w.len() as f64;
        let want = 2.0 / 512.0;
        assert!(
            (var - want).abs() < 0.2 * want,
            "sample variance {var} vs {want}"
        );
        assert!(p.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_parameters_give_zero_output_or_identity() {
        let mut arch = small_arch(Activation::default(), false);
        let mut p = init_mlp(&arch, 1);
        for w in p.weights.iter_mut().chain(p.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = 0.0;
            }
        }
        let x = Matrix::from_rows(&[vec![0.3, -0.7], vec![1.5, 2.0]]);
        let y = forward(&p, &x);
        assert!(y.data().iter().all(|&v| v == 0.0));

        arch.residual_output = true;
        let mut p = init_mlp(&arch, 1);
        for w in p.weights.iter_mut().chain(p.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = 0.0;
            }
        }
        let y = forward(&p, &x);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn forward_cached_matches_forward() {
        let arch = small_arch(Activation::default(), true);
        let p = init_mlp(&arch, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_batch(&mut rng, 7, 2);
        let y0 = forward(&p, &x);
        let (y1, _) = forward_cached(&p, &x);
        assert_eq!(y0.data(), y1.data());
    }

    /// max relative mismatch over parameters with |analytic| > 1e-6
    fn max_rel_err(analytic: &GradientSet, fd: &GradientSet) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in analytic.iter().zip(fd.iter()) {
            if a.abs() > 1e-6 {
                let rel = (a - b).abs() / a.abs().max(b.abs());
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        for (seed, activation, residual) in [
            (10u64, Activation::LeakyRelu { slope: 0.01 }, false),
            (11, Activation::LeakyRelu { slope: 0.01 }, true),
            (12, Activation::Tanh, false),
            (13, Activation::Tanh, true),
        ] {
            let arch = small_arch(activation, residual);
            let p = init_mlp(&arch, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let x = random_batch(&mut rng, 6, 2);
            let g = random_batch(&mut rng, 6, 2);
            let (_, analytic) = forward_backward(&p, &x, &g);
            let fd = finite_diff_grads(
                &p,
                |q| {
                    let y = forward(q, &x);
                    y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
                },
                1e-4,
            );
            let worst = max_rel_err(&analytic, &fd);
            assert!(worst < 1e-4, "seed {seed}: worst rel err {worst}");
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let arch = small_arch(Activation::Tanh, true);
        let p = init_mlp(&arch, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random_batch(&mut rng, 4, 2);
        let g = random_batch(&mut rng, 4, 2);
        let (_, cache) = forward_cached(&p, &x);
        let din = backward(&cache, &g, None);
        let h = 1e-6;
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut xp = x.clone();
                xp.set(i, j, x.get(i, j) + h);
                let mut xm = x.clone();
                xm.set(i, j, x.get(i, j) - h);
                let lp: f64 = forward(&p, &xp)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(a, b)| a * b)
                    .sum();
                let lm: f64 = forward(&p, &xm)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(a, b)| a * b)
                    .sum();
                let fd = (lp - lm) / (2.0 * h);
                let an = din.get(i, j);
                assert!(
                    (an - fd).abs() <= 1e-6 + 1e-4 * an.abs().max(fd.abs()),
                    "input grad ({i},{j}): {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn detached_backward_leaves_gradients_untouched_and_agrees_on_input_grad() {
        let arch = small_arch(Activation::default(), false);
        let p = init_mlp(&arch, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = random_batch(&mut rng, 5, 2);
        let g = random_batch(&mut rng, 5, 2);
        let (_, cache) = forward_cached(&p, &x);
        let mut grads = GradientSet::zeros_like(&p);
        let with = backward(&cache, &g, Some(&mut grads));
        let without = backward(&cache, &g, None);
        assert_eq!(with.data(), without.data());
        assert!(grads.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let arch = small_arch(Activation::default(), false);
        let p = init_mlp(&arch, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = random_batch(&mut rng, 3, 2);
        let g = random_batch(&mut rng, 3, 2);
        let (_, cache) = forward_cached(&p, &x);
        let mut once = GradientSet::zeros_like(&p);
        backward(&cache, &g, Some(&mut once));
        let mut twice = GradientSet::zeros_like(&p);
        backward(&cache, &g, Some(&mut twice));
        backward(&cache, &g, Some(&mut twice));
        for (a, b) in once.iter().zip(twice.iter()) {
            let want = 2.0 * a;
            assert!((b - want).abs() <= 1e-12 * want.abs().max(1.0), "{b} vs {want}");
        }
    }
}
