//! Feed-forward value approximator `V(t, x; θ)`.
//!
//! Inputs `(t, x)` are mapped affinely onto `[−1, 1]` boxes, passed through
//! `tanh` hidden layers and a linear output. Input gradients are propagated
//! as tangent streams stacked under the primal batch, so one matrix product
//! per layer serves the value and all of its input derivatives; parameter
//! gradients of the costate-augmented loss come from a hand-written reverse
//! pass through those stacked streams.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{HjbError, Result};
use crate::optim::{adam, lbfgs, AdamConfig, LbfgsConfig};
use crate::scalar::{cst, val, Real};

mod sealed {
    pub trait Gemm: Copy {
        /// `C ← α op(A) op(B) + β C` with explicit strides.
        #[allow(clippy::too_many_arguments)]
        unsafe fn gemm(
            m: usize, k: usize, n: usize, alpha: Self,
            a: *const Self, rsa: isize, csa: isize,
            b: *const Self, rsb: isize, csb: isize,
            beta: Self, c: *mut Self, rsc: isize, csc: isize,
        );
    }

    impl Gemm for f64 {
        unsafe fn gemm(
            m: usize, k: usize, n: usize, alpha: f64,
            a: *const f64, rsa: isize, csa: isize,
            b: *const f64, rsb: isize, csb: isize,
            beta: f64, c: *mut f64, rsc: isize, csc: isize,
        ) {
            matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
        }
    }

    impl Gemm for f32 {
        unsafe fn gemm(
            m: usize, k: usize, n: usize, alpha: f32,
            a: *const f32, rsa: isize, csa: isize,
            b: *const f32, rsb: isize, csb: isize,
            beta: f32, c: *mut f32, rsc: isize, csc: isize,
        ) {
            matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
        }
    }
}

/// Scalars the network can run in (`f32`, `f64`).
pub trait NetScalar: Real + sealed::Gemm {}
impl NetScalar for f32 {}
impl NetScalar for f64 {}

/// Row-major `C (m×n) ← op(A) op(B) + β C`; `op` transposes when the flag is set.
#[allow(clippy::too_many_arguments)]
fn matmul<T: NetScalar>(
    c: &mut [T], a: &[T], a_t: bool, b: &[T], b_t: bool, m: usize, k: usize, n: usize, beta: T,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths cover every index addressed by the strides above.
    unsafe {
        T::gemm(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Affine map of raw inputs `(t, x)` onto `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization { lower: vec![-1.0; dim], upper: vec![1.0; dim] }
    }

    /// `[t0, tf] × box`.
    pub fn for_problem(t0: f64, tf: f64, lower: &[f64], upper: &[f64]) -> Self {
        let mut lo = vec![t0];
        lo.extend_from_slice(lower);
        let mut hi = vec![tf];
        hi.extend_from_slice(upper);
        Normalization { lower: lo, upper: hi }
    }

    fn scale(&self, j: usize) -> f64 {
        2.0 / (self.upper[j] - self.lower[j])
    }
}

static CLIP_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `out × in`, row-major.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

/// Multilayer perceptron with `tanh` hidden layers and a scalar linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub widths: Vec<usize>,
    pub layers: Vec<Layer<T>>,
    pub normalization: Normalization,
}

/// Values and input derivatives for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput<T> {
    pub values: Vec<T>,
    /// `grads[k][i]`: derivative of sample `i` along requested input `k`.
    pub grads: Vec<Vec<T>>,
}

struct Cache<T> {
    /// Stacked post-activation matrices per layer input (`acts[0]` = input).
    acts: Vec<Vec<T>>,
    /// Stacked pre-activation matrices of hidden layers.
    pre: Vec<Vec<T>>,
    out: Vec<T>,
}

impl<T: NetScalar> MlpModel<T> {
    /// Fan-in scaled symmetric-uniform weights, zero biases.
    pub fn new(widths: &[usize], normalization: Normalization, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths[widths.len() - 1] != 1 || widths.contains(&0) {
            return Err(HjbError::InvalidInput("widths must be [input, hidden.., 1]".into()));
        }
        if normalization.lower.len() != widths[0] || normalization.upper.len() != widths[0] {
            return Err(HjbError::InvalidInput("normalization does not match input width".into()));
        }
        if normalization.lower.iter().zip(&normalization.upper).any(|(l, u)| !(u > l)) {
            return Err(HjbError::InvalidInput("normalization box is degenerate".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    w: (0..w[0] * w[1]).map(|_| cst(rng.gen_range(-bound..bound))).collect(),
                    b: vec![T::zero(); w[1]],
                }
            })
            .collect();
        Ok(MlpModel { widths: widths.to_vec(), layers, normalization })
    }

    /// All parameters zero.
    pub fn zeros(widths: &[usize], normalization: Normalization) -> Result<Self> {
        let mut m = Self::new(widths, normalization, 0)?;
        m.set_params(&vec![T::zero(); m.num_params()]);
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, theta: &[T]) {
        assert_eq!(theta.len(), self.num_params());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&theta[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&theta[k..k + nb]);
            k += nb;
        }
    }

    fn normalize(&self, t: f64, x: &[f64], z: &mut [T], inside: &mut [bool]) {
        let norm = &self.normalization;
        for j in 0..self.widths[0] {
            let raw = if j == 0 { t } else { x[j - 1] };
            let v = (raw - norm.lower[j]) * norm.scale(j) - 1.0;
            let clipped = v.clamp(-2.0, 2.0);
            inside[j] = clipped == v;
            if clipped != v && !CLIP_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("network input {raw} outside twice the normalization box; clipped");
            }
            z[j] = cst(clipped);
        }
    }

    /// Stacked forward pass: block 0 is the primal batch, block `k + 1` the
    /// tangent along raw input `dirs[k]`.
    fn forward_stacked(&self, inputs: &[(f64, &[f64])], dirs: &[usize]) -> Cache<T> {
        let b = inputs.len();
        let q = dirs.len();
        let rows = (q + 1) * b;
        let d0 = self.widths[0];
        let mut a0 = vec![T::zero(); rows * d0];
        let mut inside = vec![true; d0];
        for (i, (t, x)) in inputs.iter().enumerate() {
            self.normalize(*t, x, &mut a0[i * d0..(i + 1) * d0], &mut inside);
            for (k, &j) in dirs.iter().enumerate() {
                if inside[j] {
                    a0[((k + 1) * b + i) * d0 + j] = cst(self.normalization.scale(j));
                }
            }
        }
        let nl = self.layers.len();
        let mut acts = vec![a0];
        let mut pre = Vec::with_capacity(nl - 1);
        for (l, layer) in self.layers.iter().enumerate() {
            let (din, dout) = (self.widths[l], self.widths[l + 1]);
            let mut z = vec![T::zero(); rows * dout];
            matmul(&mut z, &acts[l], false, &layer.w, true, rows, din, dout, T::zero());
            for i in 0..b {
                for (zj, bj) in z[i * dout..(i + 1) * dout].iter_mut().zip(&layer.b) {
                    *zj += *bj;
                }
            }
            if l + 1 == nl {
                return Cache { acts, pre, out: z };
            }
            let mut a = vec![T::zero(); rows * dout];
            for i in 0..b {
                for j in 0..dout {
                    let v = z[i * dout + j].tanh();
                    a[i * dout + j] = v;
                    let s = T::one() - v * v;
                    for k in 1..=q {
                        let r = (k * b + i) * dout + j;
                        a[r] = s * z[r];
                    }
                }
            }
            pre.push(z);
            acts.push(a);
        }
        unreachable!("network has an output layer")
    }

    /// Values and derivatives along the raw inputs `dirs` (0 = t, j = x_j).
    pub fn evaluate(&self, inputs: &[(f64, &[f64])], dirs: &[usize]) -> BatchOutput<T> {
        let b = inputs.len();
        let cache = self.forward_stacked(inputs, dirs);
        BatchOutput {
            values: cache.out[..b].to_vec(),
            grads: (1..=dirs.len()).map(|k| cache.out[k * b..(k + 1) * b].to_vec()).collect(),
        }
    }

    pub fn forward(&self, t: f64, x: &[f64]) -> T {
        self.evaluate(&[(t, x)], &[]).values[0]
    }

    /// `(∂V/∂t, ∂V/∂x)`.
    pub fn input_gradient(&self, t: f64, x: &[f64]) -> (T, Vec<T>) {
        let dirs: Vec<usize> = (0..self.widths[0]).collect();
        let out = self.evaluate(&[(t, x)], &dirs);
        (out.grads[0][0], out.grads[1..].iter().map(|g| g[0]).collect())
    }

    /// Summed (not averaged) loss of a shard and its parameter gradient,
    /// accumulated into `grad`.
    fn shard_loss_grad(&self, data: &[Sample], mu: T, grad: Option<&mut [T]>) -> T {
        let b = data.len();
        let n = self.widths[0] - 1;
        let dirs: Vec<usize> = (1..=n).collect();
        let inputs: Vec<(f64, &[f64])> = data.iter().map(|s| (s.t, s.x.as_slice())).collect();
        let cache = self.forward_stacked(&inputs, &dirs);
        let rows = (n + 1) * b;
        let two = cst::<T>(2.0);
        let mut loss = T::zero();
        let mut gout = vec![T::zero(); rows];
        for (i, s) in data.iter().enumerate() {
            let r = cache.out[i] - cst(s.v);
            loss += r * r;
            gout[i] = two * r;
            for k in 0..n {
                let e = cache.out[(k + 1) * b + i] - cst(s.lambda[k]);
                loss += mu * e * e;
                gout[(k + 1) * b + i] = two * mu * e;
            }
        }
        let Some(grad) = grad else { return loss };
        let nl = self.layers.len();
        let offsets: Vec<usize> = self
            .widths
            .windows(2)
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        // adjoint of the current layer's stacked output
        let mut adj = gout;
        for l in (0..nl).rev() {
            let (din, dout) = (self.widths[l], self.widths[l + 1]);
            let zbar = if l + 1 == nl {
                adj
            } else {
                let a = &cache.acts[l + 1];
                let z = &cache.pre[l];
                let mut zbar = vec![T::zero(); rows * dout];
                for i in 0..b {
                    for j in 0..dout {
                        let p = i * dout + j;
                        let s = T::one() - a[p] * a[p];
                        let mut sbar = T::zero();
                        for k in 1..=n {
                            let r = (k * b + i) * dout + j;
                            sbar += adj[r] * z[r];
                            zbar[r] = adj[r] * s;
                        }
                        zbar[p] = (adj[p] - two * sbar * a[p]) * s;
                    }
                }
                zbar
            };
            let off = offsets[l];
            let (gw, rest) = grad[off..].split_at_mut(din * dout);
            matmul(gw, &zbar, true, &cache.acts[l], false, dout, rows, din, T::one());
            for i in 0..b {
                for j in 0..dout {
                    rest[j] += zbar[i * dout + j];
                }
            }
            if l > 0 {
                let mut prev = vec![T::zero(); rows * din];
                matmul(&mut prev, &zbar, false, &self.layers[l].w, false, rows, dout, din, T::zero());
                adj = prev;
            } else {
                break;
            }
        }
        loss
    }

    /// `mean (V − V̂)² + μ · mean ‖λ − V̂_x‖²`.
    pub fn loss(&self, data: &[Sample], mu: f64) -> Result<T> {
        if data.is_empty() {
            return Err(HjbError::EmptyDataset);
        }
        let total = data
            .chunks(SHARD)
            .map(|c| self.shard_loss_grad(c, cst(mu), None))
            .fold(T::zero(), |a, b| a + b);
        Ok(total / cst(data.len() as f64))
    }

    /// Loss and its exact gradient with respect to the flattened parameters.
    /// Shards are reduced in a fixed order, so the result does not depend on
    /// the number of threads.
    pub fn loss_and_gradient(&self, data: &[Sample], mu: f64) -> Result<(T, Vec<T>)> {
        if data.is_empty() {
            return Err(HjbError::EmptyDataset);
        }
        let np = self.num_params();
        let parts: Vec<(T, Vec<T>)> = data
            .par_chunks(SHARD)
            .map(|c| {
                let mut g = vec![T::zero(); np];
                let l = self.shard_loss_grad(c, cst(mu), Some(&mut g));
                (l, g)
            })
            .collect();
        let inv = T::one() / cst(data.len() as f64);
        let mut grad = vec![T::zero(); np];
        let mut loss = T::zero();
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        for g in grad.iter_mut() {
            *g *= inv;
        }
        Ok((loss * inv, grad))
    }

    pub fn param_gradient(&self, data: &[Sample], mu: f64) -> Result<Vec<T>> {
        self.loss_and_gradient(data, mu).map(|(_, g)| g)
    }
}

const SHARD: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the costate term.
    pub mu: f64,
    pub adam: AdamStage,
    pub lbfgs: LbfgsStage,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamStage {
    pub learning_rate: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsStage {
    pub memory: usize,
    pub max_iter: usize,
    pub gtol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mu: 1.0,
            adam: AdamStage { learning_rate: 1e-3, steps: 2000 },
            lbfgs: LbfgsStage { memory: 10, max_iter: 5000, gtol: 1e-8 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || !(self.adam.learning_rate > 0.0) || self.lbfgs.memory == 0 {
            return Err(HjbError::InvalidInput("train config needs mu ≥ 0, learning rate > 0, memory ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub stage: String,
    pub loss: f64,
}

pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut s = String::from("iteration,stage,loss\n");
    for h in history {
        s.push_str(&format!("{},{},{:e}\n", h.iteration, h.stage, h.loss));
    }
    s
}

/// First-order warm-up followed by L-BFGS on the training loss; returns the
/// best iterate seen and the per-iteration loss history.
pub fn train<T: NetScalar>(
    model: &MlpModel<T>,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<(MlpModel<T>, Vec<HistoryEntry>)> {
    cfg.validate()?;
    let mut work = model.clone();
    let theta0: Vec<f64> = model.params().into_iter().map(val).collect();
    let initial = val(model.loss(data, cfg.mu)?);
    let mut history = vec![HistoryEntry { iteration: 0, stage: "init".into(), loss: initial }];
    if initial == 0.0 {
        return Ok((model.clone(), history));
    }
    let mut oracle = |theta: &[f64], g: &mut [f64]| -> Result<f64> {
        let p: Vec<T> = theta.iter().map(|&v| cst(v)).collect();
        work.set_params(&p);
        let (l, grad) = work.loss_and_gradient(data, cfg.mu)?;
        for (gi, v) in g.iter_mut().zip(grad) {
            *gi = val(v);
        }
        Ok(val(l))
    };
    let mut best = (initial, theta0.clone());
    let mut theta = theta0;
    let mut counter = 0;
    if cfg.adam.steps > 0 {
        let acfg = AdamConfig { learning_rate: cfg.adam.learning_rate, steps: cfg.adam.steps, ..Default::default() };
        let m = adam(&mut oracle, &theta, &acfg, |_, l, _| {
            counter += 1;
            history.push(HistoryEntry { iteration: counter, stage: "adam".into(), loss: l });
        })
        .map_err(|e| match e {
            HjbError::NonFiniteValue { .. } => HjbError::NonFiniteValue { context: "training loss (adam)", at: counter as f64 },
            other => other,
        })?;
        if m.value < best.0 {
            best = (m.value, m.x.clone());
        }
        theta = m.x;
    }
    if cfg.lbfgs.max_iter > 0 {
        let lcfg = LbfgsConfig {
            memory: cfg.lbfgs.memory,
            max_iter: cfg.lbfgs.max_iter,
            gtol: cfg.lbfgs.gtol,
            ..Default::default()
        };
        let m = lbfgs(&mut oracle, &theta, &lcfg, |_, l, _| {
            counter += 1;
            history.push(HistoryEntry { iteration: counter, stage: "lbfgs".into(), loss: l });
        })?;
        if m.value < best.0 {
            best = (m.value, m.x);
        }
    }
    let mut out = model.clone();
    out.set_params(&best.1.iter().map(|&v| cst(v)).collect::<Vec<T>>());
    Ok((out, history))
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    widths: Vec<usize>,
    activation: String,
    normalization: Normalization,
    layers: Vec<LayerFile>,
}

impl<T: NetScalar> MlpModel<T> {
    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .layers
            .iter()
            .zip(self.widths.windows(2))
            .map(|(l, w)| LayerFile {
                w: l.w.chunks(w[0]).map(|r| r.iter().map(|&v| val(v)).collect()).collect(),
                b: l.b.iter().map(|&v| val(v)).collect(),
            })
            .collect();
        let file = ModelFile {
            widths: self.widths.clone(),
            activation: "tanh".into(),
            normalization: self.normalization.clone(),
            layers,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.activation != "tanh" {
            return Err(HjbError::Parse(format!("unsupported activation '{}'", file.activation)));
        }
        let mut model = Self::zeros(&file.widths, file.normalization)?;
        if file.layers.len() != model.layers.len() {
            return Err(HjbError::Parse("layer count does not match widths".into()));
        }
        for ((layer, lf), w) in model.layers.iter_mut().zip(file.layers).zip(file.widths.windows(2)) {
            if lf.b.len() != w[1] || lf.w.len() != w[1] || lf.w.iter().any(|r| r.len() != w[0]) {
                return Err(HjbError::Parse("layer shape does not match widths".into()));
            }
            layer.w = lf.w.into_iter().flatten().map(cst).collect();
            layer.b = lf.b.into_iter().map(cst).collect();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Source;

    fn sample(t: f64, x: &[f64], v: f64, lambda: &[f64]) -> Sample {
        Sample { t, x: x.to_vec(), v, lambda: lambda.to_vec(), src: Source::March }
    }

    fn random_model(seed: u64) -> MlpModel<f64> {
        let norm = Normalization { lower: vec![0.0, -1.0, -2.0], upper: vec![2.0, 1.0, 2.0] };
        let mut m = MlpModel::new(&[3, 5, 4, 1], norm, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let theta: Vec<f64> = (0..m.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        m.set_params(&theta);
        m
    }

    #[test]
    fn zero_network_is_zero() {
        let m = MlpModel::<f64>::zeros(&[3, 8, 8, 1], Normalization::identity(3)).unwrap();
        assert_eq!(m.forward(0.3, &[0.1, -0.4]), 0.0);
        let (dt, dx) = m.input_gradient(0.3, &[0.1, -0.4]);
        assert_eq!(dt, 0.0);
        assert_eq!(dx, vec![0.0, 0.0]);
    }

    #[test]
    fn affine_network() {
        let norm = Normalization { lower: vec![0.0, -2.0], upper: vec![4.0, 2.0] };
        let mut m = MlpModel::<f64>::zeros(&[2, 1], norm).unwrap();
        m.set_params(&[0.5, -3.0, 0.25]);
        // z = (t/2 − 1, x/2)
        let v = m.forward(1.0, &[1.0]);
        assert!((v - (0.5 * -0.5 - 3.0 * 0.5 + 0.25)).abs() < 1e-15);
        let (dt, dx) = m.input_gradient(1.0, &[1.0]);
        assert!((dt - 0.25).abs() < 1e-15 && (dx[0] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let m = random_model(seed);
            let (t, x) = (0.7, [0.3, -0.9]);
            let (dt, dx) = m.input_gradient(t, &x);
            let h = 1e-5;
            let fd_t = (m.forward(t + h, &x) - m.forward(t - h, &x)) / (2.0 * h);
            assert!((dt - fd_t).abs() <= 1e-5 * dt.abs().max(1e-3));
            for j in 0..2 {
                let (mut xp, mut xm) = (x, x);
                xp[j] += h;
                xm[j] -= h;
                let fd = (m.forward(t, &xp) - m.forward(t, &xm)) / (2.0 * h);
                assert!((dx[j] - fd).abs() <= 1e-5 * dx[j].abs().max(1e-3), "{} vs {}", dx[j], fd);
            }
        }
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let data = vec![
            sample(0.1, &[0.2, 0.5], 1.0, &[0.3, -0.2]),
            sample(1.5, &[-0.7, 1.1], 0.4, &[1.0, 0.0]),
            sample(0.9, &[0.0, -1.5], 2.0, &[-0.5, 0.8]),
        ];
        let mut m = random_model(3);
        let (_, g) = m.loss_and_gradient(&data, 0.7).unwrap();
        let theta = m.params();
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut tp = theta.clone();
            tp[i] += h;
            m.set_params(&tp);
            let lp = m.loss(&data, 0.7).unwrap();
            tp[i] -= 2.0 * h;
            m.set_params(&tp);
            let lm = m.loss(&data, 0.7).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * g[i].abs().max(1e-2), "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn loss_examples() {
        let z = MlpModel::<f64>::zeros(&[2, 4, 1], Normalization::identity(2)).unwrap();
        let d = [sample(0.0, &[0.5], 2.0, &[0.0])];
        assert_eq!(z.loss(&d, 3.0).unwrap(), 4.0);
        assert_eq!(z.loss(&[], 1.0), Err(HjbError::EmptyDataset));
        let m = random_model(1);
        let d = [sample(0.2, &[0.1, 0.1], 1.0, &[0.5, 0.5])];
        let l0 = m.loss(&d, 0.0).unwrap();
        assert!((l0 - (m.forward(0.2, &[0.1, 0.1]) - 1.0).powi(2)).abs() < 1e-14);
        // gradient is affine in μ
        let g1 = m.param_gradient(&d, 1.0).unwrap();
        let g2 = m.param_gradient(&d, 2.0).unwrap();
        let g0 = m.param_gradient(&d, 0.0).unwrap();
        for i in 0..g0.len() {
            assert!(((g2[i] - g0[i]) - 2.0 * (g1[i] - g0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolating_model_has_zero_loss_and_gradient() {
        let m = random_model(2);
        let (t, x) = (0.4, [0.2, 0.3]);
        let (_, dx) = m.input_gradient(t, &x);
        let d = [sample(t, &x, m.forward(t, &x), &dx)];
        assert_eq!(m.loss(&d, 1.0).unwrap(), 0.0);
        assert!(m.param_gradient(&d, 1.0).unwrap().iter().all(|g| *g == 0.0));
        let (trained, hist) = train(&m, &d, &TrainConfig::default()).unwrap();
        assert_eq!(trained, m);
        assert_eq!(hist.len(), 1);
    }

    #[test]
    fn json_round_trip_bit_exact() {
        let m = random_model(4);
        let back = MlpModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.forward(0.3, &[0.1, 0.2]).to_bits(), m.forward(0.3, &[0.1, 0.2]).to_bits());
        assert!(MlpModel::<f64>::from_json("{\"widths\":[2,1]}").is_err());
    }

    #[test]
    fn single_precision_runs() {
        let m = MlpModel::<f32>::new(&[3, 4, 1], Normalization::identity(3), 1).unwrap();
        assert!(m.forward(0.0, &[0.5, 0.5]).is_finite());
    }

    #[test]
    fn training_is_deterministic_and_decreases_loss() {
        let data: Vec<Sample> = (0..40)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 39.0;
                sample(0.0, &[x], 0.5 * x * x, &[x])
            })
            .collect();
        let m = MlpModel::<f64>::new(&[2, 8, 1], Normalization::for_problem(0.0, 1.0, &[-1.0], &[1.0]), 5).unwrap();
        let cfg = TrainConfig {
            adam: AdamStage { learning_rate: 1e-2, steps: 100 },
            lbfgs: LbfgsStage { memory: 10, max_iter: 200, gtol: 1e-10 },
            ..Default::default()
        };
        let (a, ha) = train(&m, &data, &cfg).unwrap();
        let (b, _) = train(&m, &data, &cfg).unwrap();
        assert_eq!(a, b);
        let final_loss = a.loss(&data, 1.0).unwrap();
        assert!(final_loss < m.loss(&data, 1.0).unwrap());
        assert!(final_loss < 1e-4, "{final_loss}");
        assert_eq!(ha[0].stage, "init");
        assert!(history_csv(&ha).starts_with("iteration,stage,loss\n0,init,"));
    }
}
