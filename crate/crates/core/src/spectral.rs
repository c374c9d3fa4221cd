//! Legendre–Gauss–Lobatto pseudospectral transcription of the control
//! problem, solved by an augmented quadratic-penalty homotopy.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::error::{HjbError, Result};
use crate::integrate::Rk45;
use crate::linalg::cholesky_solve;
use crate::problem::ControlProblem;
use crate::scalar::{dual_diff, Dual, Real};

/// Nodes, quadrature weights and differentiation matrix on `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LglGrid<T> {
    pub order: usize,
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    /// Row-major `(N+1) × (N+1)`.
    pub diff: Vec<T>,
    /// Barycentric interpolation weights.
    pub bary: Vec<T>,
}

/// `(L_N, L′_N)` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    // L′_N = N (x L_N − L_{N−1}) / (x² − 1), valid off the endpoints
    let nf = n as f64;
    let dp = if (x * x - 1.0).abs() < 1e-300 { 0.0 } else { nf * (x * p1 - p0) / (x * x - 1.0) };
    (p1, dp)
}

fn build_grid(n: usize) -> Result<LglGrid<f64>> {
    if n == 0 {
        return Err(HjbError::InvalidInput("LGL order must be ≥ 1".into()));
    }
    let nf = n as f64;
    let mut nodes = vec![0.0; n + 1];
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    for j in 1..n {
        // interior roots of L′_N; Newton with L″ from Legendre's equation
        let mut x = -(std::f64::consts::PI * j as f64 / nf).cos();
        let mut converged = false;
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let ddp = (2.0 * x * dp - nf * (nf + 1.0) * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() <= 1e-16 * (1.0 + x.abs()) {
                converged = true;
                break;
            }
        }
        let (p, dp) = legendre(n, x);
        if !converged && dp.abs() > 1e-13 * p.abs().max(1.0) * nf * nf {
            return Err(HjbError::NewtonFailure { order: n });
        }
        nodes[j] = x;
    }
    // enforce exact symmetry
    for j in 0..=n / 2 {
        let m = 0.5 * (nodes[n - j] - nodes[j]);
        nodes[j] = -m;
        nodes[n - j] = m;
    }
    if n % 2 == 0 {
        nodes[n / 2] = 0.0;
    }
    let ln: Vec<f64> = nodes.iter().map(|&x| legendre(n, x).0).collect();
    let weights: Vec<f64> = ln.iter().map(|l| 2.0 / (nf * (nf + 1.0) * l * l)).collect();
    let m = n + 1;
    let mut diff = vec![0.0; m * m];
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            if i != j {
                let d = ln[i] / (ln[j] * (nodes[i] - nodes[j]));
                diff[i * m + j] = d;
                row += d;
            }
        }
        // negative-sum diagonal: rows annihilate constants to rounding
        diff[i * m + i] = -row;
    }
    let mut bary = vec![1.0; m];
    for j in 0..m {
        for k in 0..m {
            if k != j {
                bary[j] /= nodes[j] - nodes[k];
            }
        }
    }
    let scale = bary.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    bary.iter_mut().for_each(|b| *b /= scale);
    Ok(LglGrid { order: n, nodes, weights, diff, bary })
}

static GRIDS: Lazy<Mutex<HashMap<usize, Arc<LglGrid<f64>>>>> = Lazy::new(|| Mutex::new(HashMap::new()));

/// Cached grid of order `n`.
pub fn lgl_grid(n: usize) -> Result<Arc<LglGrid<f64>>> {
    if let Some(g) = GRIDS.lock().map_err(|_| HjbError::InvalidInput("grid cache poisoned".into()))?.get(&n) {
        return Ok(g.clone());
    }
    let g = Arc::new(build_grid(n)?);
    if let Ok(mut cache) = GRIDS.lock() {
        cache.insert(n, g.clone());
    }
    Ok(g)
}

impl LglGrid<f64> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_k g(τ_k)`.
    pub fn quadrature<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, w)| w * g(x)).sum()
    }

    /// Barycentric Lagrange interpolation of nodal `values` at `tau`.
    pub fn interpolate(&self, values: &[f64], tau: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, &x) in self.nodes.iter().enumerate() {
            let d = tau - x;
            if d == 0.0 {
                return values[j];
            }
            let c = self.bary[j] / d;
            num += c * values[j];
            den += c;
        }
        num / den
    }

    /// CSV dump: `k,node,weight,D_k0,…,D_kN`.
    pub fn to_csv(&self) -> String {
        let m = self.len();
        let mut out = String::from("k,node,weight");
        for j in 0..m {
            out.push_str(&format!(",D{j}"));
        }
        out.push('\n');
        for i in 0..m {
            out.push_str(&format!("{i},{},{}", self.nodes[i], self.weights[i]));
            for j in 0..m {
                out.push_str(&format!(",{}", self.diff[i * m + j]));
            }
            out.push('\n');
        }
        out
    }
}

/// The discretized problem: states `x̄_k` and controls `ū_k` at the LGL
/// nodes mapped to `[t0, tf]`; decision vector `[x̄_0 … x̄_N, ū_0 … ū_N]`.
pub struct TranscribedNlp<'a, P: ?Sized> {
    pub problem: &'a P,
    pub grid: Arc<LglGrid<f64>>,
    pub t0: f64,
    pub tf: f64,
    pub x0: Vec<f64>,
    pub eps: f64,
}

pub fn transcribe<'a, P: ControlProblem + ?Sized>(
    problem: &'a P,
    t0: f64,
    x0: &[f64],
    order: usize,
    eps: f64,
) -> Result<TranscribedNlp<'a, P>> {
    if order < 4 {
        return Err(HjbError::InvalidInput("pseudospectral order must be ≥ 4".into()));
    }
    if !(eps > 0.0) {
        return Err(HjbError::InvalidInput("feasibility tolerance must be positive".into()));
    }
    let tf = problem.final_time();
    if !(tf > t0) || x0.len() != problem.state_dim() {
        return Err(HjbError::InvalidInput("need t0 < tf and x0 of the state dimension".into()));
    }
    Ok(TranscribedNlp { problem, grid: lgl_grid(order)?, t0, tf, x0: x0.to_vec(), eps })
}

impl<P: ControlProblem + ?Sized> TranscribedNlp<'_, P> {
    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn num_vars(&self) -> usize {
        self.nodes() * (self.problem.state_dim() + self.problem.control_dim())
    }

    /// `(tf − t0)/2`.
    pub fn half_span(&self) -> f64 {
        0.5 * (self.tf - self.t0)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + (self.grid.nodes[k] + 1.0) * self.half_span()
    }

    pub fn state<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        let n = self.problem.state_dim();
        &z[k * n..(k + 1) * n]
    }

    pub fn control<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        let (n, m) = (self.problem.state_dim(), self.problem.control_dim());
        let off = self.nodes() * n;
        &z[off + k * m..off + (k + 1) * m]
    }

    /// `(tf−t0)/2 · Σ w_k L(t_k, x̄_k, ū_k) + ψ(x̄_N)`.
    pub fn objective(&self, z: &[f64]) -> f64 {
        let h = self.half_span();
        let mut j = 0.0;
        for k in 0..self.nodes() {
            j += h * self.grid.weights[k] * self.problem.running_cost(self.time(k), self.state(z, k), self.control(z, k));
        }
        j + self.problem.terminal_cost(self.state(z, self.nodes() - 1))
    }

    /// Dynamics defects `Σ_i D_ki x̄_i − (tf−t0)/2 f(t_k, x̄_k, ū_k)`, node by
    /// node (`(N+1)·n` values).
    pub fn defects(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (n, m) = (self.problem.state_dim(), self.nodes());
        let h = self.half_span();
        let mut out = vec![0.0; m * n];
        let mut f = vec![0.0; n];
        for k in 0..m {
            self.problem.dynamics(self.time(k), self.state(z, k), self.control(z, k), &mut f)?;
            for i in 0..n {
                let mut d = -h * f[i];
                for j in 0..m {
                    d += self.grid.diff[k * m + j] * z[j * n + i];
                }
                out[k * n + i] = d;
            }
        }
        Ok(out)
    }

    /// Initial-state constraint `x̄_0 − x0`; the problem class has no other
    /// endpoint conditions.
    pub fn endpoint(&self, z: &[f64]) -> Vec<f64> {
        self.state(z, 0).iter().zip(&self.x0).map(|(a, b)| a - b).collect()
    }

    /// Largest absolute constraint violation.
    pub fn max_violation(&self, z: &[f64]) -> Result<f64> {
        let d = self.defects(z)?;
        Ok(d.iter().chain(&self.endpoint(z)).fold(0.0f64, |s, v| s.max(v.abs())))
    }

    /// Augmented penalty `J + Σ νᵀc + ρ/2 ‖c‖²` and its exact gradient.
    fn penalty(&self, z: &[f64], nu: &[f64], rho: f64, grad: &mut [f64]) -> Result<f64> {
        let (n, mc, nodes) = (self.problem.state_dim(), self.problem.control_dim(), self.nodes());
        let d = self.defects(z)?;
        let e = self.endpoint(z);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = self.objective(z);
        // multiplier-weighted residuals g = ν + ρ c, by block
        let mut gd = vec![0.0; d.len()];
        for (i, c) in d.iter().enumerate() {
            value += nu[i] * c + 0.5 * rho * c * c;
            gd[i] = nu[i] + rho * c;
        }
        let off_e = d.len();
        for (i, c) in e.iter().enumerate() {
            value += nu[off_e + i] * c + 0.5 * rho * c * c;
            grad[i] += nu[off_e + i] + rho * c;
        }
        // linear part Σ_k gᵀ D x̄
        for k in 0..nodes {
            for j in 0..nodes {
                let dkj = self.grid.diff[k * nodes + j];
                if dkj != 0.0 {
                    for i in 0..n {
                        grad[j * n + i] += dkj * gd[k * n + i];
                    }
                }
            }
        }
        // nodal part h w_k L − h gᵀ f, differentiated in (x̄_k, ū_k)
        let off_u = nodes * n;
        for k in 0..nodes {
            let xu = self.node_vars(z, k);
            let gk = &gd[k * n..(k + 1) * n];
            let (_, g) = dual_diff(|v: &[Dual<f64>]| self.node_term(k, v, gk), &xu)?;
            for i in 0..n {
                grad[k * n + i] += g[i];
            }
            for i in 0..mc {
                grad[off_u + k * mc + i] += g[n + i];
            }
        }
        Ok(value)
    }

    fn node_vars(&self, z: &[f64], k: usize) -> Vec<f64> {
        let mut xu = self.state(z, k).to_vec();
        xu.extend_from_slice(self.control(z, k));
        xu
    }

    /// `h w_k L(x̄_k, ū_k) − h gᵀ f(x̄_k, ū_k)` (plus `ψ` at the last node):
    /// the node-local part of the penalty for fixed weighted residuals `g`.
    fn node_term<T: Real>(&self, k: usize, v: &[T], g: &[f64]) -> T {
        let n = self.problem.state_dim();
        let (x, u) = v.split_at(n);
        let t = T::from_f64(self.time(k)).unwrap_or_else(T::zero);
        let h = self.half_span();
        let mut f = vec![T::zero(); n];
        if self.problem.dynamics(t, x, u, &mut f).is_err() {
            return T::nan();
        }
        let c = |v: f64| T::from_f64(v).unwrap_or_else(T::zero);
        let mut s = self.problem.running_cost(t, x, u) * c(h * self.grid.weights[k]);
        for i in 0..n {
            s -= f[i] * c(h * g[i]);
        }
        if k + 1 == self.nodes() {
            s += self.problem.terminal_cost(x);
        }
        s
    }

    /// Dense Hessian of the augmented penalty: node blocks of
    /// `∇²(h w L − h gᵀ f)` plus the Gauss–Newton term `ρ Jᵀ J`, which is
    /// exact because the constraints enter quadratically.
    fn penalty_hessian(&self, z: &[f64], nu: &[f64], rho: f64) -> Result<Vec<f64>> {
        let (n, mc, nodes) = (self.problem.state_dim(), self.problem.control_dim(), self.nodes());
        let nv = self.num_vars();
        let nc = nodes * n + n;
        let h = self.half_span();
        let d = self.defects(z)?;
        let gd: Vec<f64> = d.iter().enumerate().map(|(i, c)| nu[i] + rho * c).collect();
        let index = |k: usize, a: usize| if a < n { k * n + a } else { nodes * n + k * mc + (a - n) };
        let mut hess = vec![0.0; nv * nv];
        let mut jac = vec![0.0; nc * nv];
        let w = n + mc;
        for k in 0..nodes {
            let xu = self.node_vars(z, k);
            let gk = &gd[k * n..(k + 1) * n];
            for a in 0..w {
                for b in a..w {
                    let v: Vec<Dual<Dual<f64>>> = xu
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| {
                            Dual::new(Dual::new(x, if i == b { 1.0 } else { 0.0 }), Dual::new(if i == a { 1.0 } else { 0.0 }, 0.0))
                        })
                        .collect();
                    let hab = self.node_term(k, &v, gk).eps.eps;
                    if !hab.is_finite() {
                        return Err(HjbError::NonFiniteValue { context: "pseudospectral Hessian", at: self.time(k) });
                    }
                    let (ia, ib) = (index(k, a), index(k, b));
                    hess[ia * nv + ib] += hab;
                    if ia != ib {
                        hess[ib * nv + ia] += hab;
                    }
                }
            }
            // constraint Jacobian rows of node k: −h ∂f/∂(x̄_k, ū_k)
            let t = Dual::constant(self.time(k));
            for a in 0..w {
                let v: Vec<Dual<f64>> =
                    xu.iter().enumerate().map(|(i, &x)| if i == a { Dual::variable(x) } else { Dual::constant(x) }).collect();
                let mut f = vec![Dual::constant(0.0); n];
                self.problem.dynamics(t, &v[..n], &v[n..], &mut f)?;
                for i in 0..n {
                    jac[(k * n + i) * nv + index(k, a)] -= h * f[i].eps;
                }
            }
            for j in 0..nodes {
                let dkj = self.grid.diff[k * nodes + j];
                for i in 0..n {
                    jac[(k * n + i) * nv + j * n + i] += dkj;
                }
            }
        }
        for i in 0..n {
            jac[(nodes * n + i) * nv + i] = 1.0;
        }
        // ρ JᵀJ, skipping structural zeros
        for r in 0..nc {
            let row = &jac[r * nv..(r + 1) * nv];
            let nz: Vec<usize> = (0..nv).filter(|&c| row[c] != 0.0).collect();
            for &a in &nz {
                for &b in &nz {
                    hess[a * nv + b] += rho * row[a] * row[b];
                }
            }
        }
        Ok(hess)
    }

    /// Uncontrolled rollout sampled at the nodes, `ū = 0`.
    pub fn initial_iterate(&self) -> Vec<f64> {
        let (n, m) = (self.problem.state_dim(), self.problem.control_dim());
        let mut z = vec![0.0; self.num_vars()];
        let zero_u = vec![0.0; m];
        let rollout = Rk45::new(1e-10, 1e-12).integrate(
            |t, x: &[f64], dx: &mut [f64]| self.problem.dynamics(t, x, &zero_u, dx),
            self.t0,
            self.tf,
            &self.x0,
        );
        for k in 0..self.nodes() {
            let xk = match &rollout {
                Ok(sol) => sol.dense_eval(self.time(k)),
                Err(_) => self.x0.clone(),
            };
            z[k * n..(k + 1) * n].copy_from_slice(&xk);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsConfig {
    pub order: usize,
    pub eps: f64,
    pub initial_penalty: f64,
    pub penalty_factor: f64,
    pub stages: usize,
    pub gtol: f64,
    pub max_inner: usize,
}

impl Default for PsConfig {
    fn default() -> Self {
        PsConfig { order: 16, eps: 1e-6, initial_penalty: 10.0, penalty_factor: 10.0, stages: 6, gtol: 1e-8, max_inner: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsReport {
    pub stages: usize,
    pub final_penalty: f64,
    pub max_defect: f64,
    pub inner_iterations: usize,
    /// Whether the last inner minimization met the gradient tolerance.
    pub inner_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsSolution {
    pub value: f64,
    pub t0: f64,
    pub tf: f64,
    pub order: usize,
    /// Node times in `[t0, tf]`.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub report: PsReport,
}

struct InnerResult {
    z: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Damped Newton on the augmented penalty with a Levenberg shift that keeps
/// the step a descent direction.
fn newton_inner<P: ControlProblem + ?Sized>(
    nlp: &TranscribedNlp<'_, P>,
    z0: Vec<f64>,
    nu: &[f64],
    rho: f64,
    cfg: &PsConfig,
) -> Result<InnerResult> {
    let nv = nlp.num_vars();
    let mut z = z0;
    let mut grad = vec![0.0; nv];
    let mut scratch = vec![0.0; nv];
    let mut value = nlp.penalty(&z, nu, rho, &mut grad)?;
    for it in 0..cfg.max_inner {
        let gnorm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= cfg.gtol {
            return Ok(InnerResult { z, iterations: it, converged: true });
        }
        let hess = nlp.penalty_hessian(&z, nu, rho)?;
        let diag = (0..nv).fold(0.0f64, |m, i| m.max(hess[i * nv + i].abs())).max(1.0);
        let mut shift = 0.0;
        let step = loop {
            let mut a = hess.clone();
            for i in 0..nv {
                a[i * nv + i] += shift;
            }
            let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
            if cholesky_solve(&a, &mut d, nv).is_ok() && d.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                break Some(d);
            }
            shift = if shift == 0.0 { 1e-10 * diag } else { shift * 10.0 };
            if shift > 1e10 * diag {
                break None;
            }
        };
        let Some(d) = step else {
            return Ok(InnerResult { z, iterations: it, converged: false });
        };
        let slope: f64 = d.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = z.iter().zip(&d).map(|(x, s)| x + alpha * s).collect();
            if let Ok(v) = nlp.penalty(&trial, nu, rho, &mut scratch) {
                if v <= value + 1e-4 * alpha * slope {
                    accepted = Some((trial, v));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, v)) = accepted else {
            // rounding floor: no further decrease representable
            return Ok(InnerResult { z, iterations: it, converged: false });
        };
        let stalled = value - v <= 4.0 * f64::EPSILON * value.abs();
        z = trial;
        value = v;
        std::mem::swap(&mut grad, &mut scratch);
        if stalled {
            return Ok(InnerResult { z, iterations: it + 1, converged: false });
        }
    }
    Ok(InnerResult { z, iterations: cfg.max_inner, converged: false })
}

/// Solves the transcribed problem: per stage a Newton minimization of the
/// augmented penalty, then a first-order multiplier update and `ρ ← 10ρ`.
pub fn solve_ps<P: ControlProblem + ?Sized>(p: &P, t0: f64, x0: &[f64], cfg: &PsConfig) -> Result<PsSolution> {
    let nlp = transcribe(p, t0, x0, cfg.order, cfg.eps)?;
    let n = p.state_dim();
    let mut z = nlp.initial_iterate();
    let mut nu = vec![0.0; nlp.nodes() * n + n];
    let mut rho = cfg.initial_penalty;
    let mut inner_iterations = 0;
    let mut inner_converged = false;
    let mut violation = f64::INFINITY;
    let mut stages = 0;
    for stage in 0..cfg.stages {
        stages = stage + 1;
        let res = newton_inner(&nlp, z, &nu, rho, cfg)?;
        z = res.z;
        inner_iterations += res.iterations;
        inner_converged = res.converged;
        let d = nlp.defects(&z)?;
        let e = nlp.endpoint(&z);
        violation = d.iter().chain(&e).fold(0.0f64, |s, v| s.max(v.abs()));
        if !violation.is_finite() {
            return Err(HjbError::NoConvergence(format!("penalty stage {stage}: non-finite iterate")));
        }
        log::debug!("ps stage {stage}: ρ = {rho:e}, J = {:.12}, defect {violation:e}, {} iterations", nlp.objective(&z), res.iterations);
        for (nu_i, c) in nu.iter_mut().zip(d.iter().chain(&e)) {
            *nu_i += rho * c;
        }
        if stage + 1 < cfg.stages {
            rho *= cfg.penalty_factor;
        }
    }
    if !(violation <= cfg.eps) {
        return Err(HjbError::InfeasibleAtMaxPenalty { defect: violation });
    }
    let times: Vec<f64> = (0..nlp.nodes()).map(|k| nlp.time(k)).collect();
    Ok(PsSolution {
        value: nlp.objective(&z),
        t0,
        tf: nlp.tf,
        order: cfg.order,
        times,
        states: (0..nlp.nodes()).map(|k| nlp.state(&z, k).to_vec()).collect(),
        controls: (0..nlp.nodes()).map(|k| nlp.control(&z, k).to_vec()).collect(),
        report: PsReport { stages, final_penalty: rho, max_defect: violation, inner_iterations, inner_converged },
    })
}

/// Barycentric Lagrange evaluation of the nodal state and control at `t`.
pub fn interpolate_solution(sol: &PsSolution, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(t >= sol.t0 && t <= sol.tf) {
        return Err(HjbError::InvalidInput(format!("t = {t} outside [{}, {}]", sol.t0, sol.tf)));
    }
    let grid = lgl_grid(sol.order)?;
    let tau = 2.0 * (t - sol.t0) / (sol.tf - sol.t0) - 1.0;
    let column = |rows: &[Vec<f64>], i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let n = sol.states.first().map_or(0, |x| x.len());
    let m = sol.controls.first().map_or(0, |u| u.len());
    let x = (0..n).map(|i| grid.interpolate(&column(&sol.states, i), tau)).collect();
    let u = (0..m).map(|i| grid.interpolate(&column(&sol.controls, i), tau)).collect();
    Ok((x, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Lqr, RigidBody, RigidBodyParams};

    #[test]
    fn low_orders_exact() {
        let g = lgl_grid(1).unwrap();
        assert_eq!(g.nodes, vec![-1.0, 1.0]);
        assert!(g.weights.iter().all(|w| (w - 1.0).abs() < 1e-15));
        let g = lgl_grid(2).unwrap();
        assert_eq!(g.nodes, vec![-1.0, 0.0, 1.0]);
        for (w, e) in g.weights.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert!((w - e).abs() < 1e-15);
        }
        let g = lgl_grid(4).unwrap();
        let r = (3.0f64 / 7.0).sqrt();
        assert!((g.nodes[1] + r).abs() < 1e-15 && g.nodes[2] == 0.0 && (g.nodes[3] - r).abs() < 1e-15);
    }

    #[test]
    fn grid_invariants() {
        for n in [4, 8, 16, 32, 64] {
            let g = lgl_grid(n).unwrap();
            assert!((g.weights.iter().sum::<f64>() - 2.0).abs() <= 1e-12, "order {n}");
            for deg in 0..=2 * n - 1 {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((g.quadrature(|x| x.powi(deg as i32)) - exact).abs() <= 1e-10, "order {n} degree {deg}");
            }
            let m = n + 1;
            for i in 0..m {
                let row: f64 = g.diff[i * m..(i + 1) * m].iter().sum();
                assert!(row.abs() <= 1e-10);
            }
            for j in 1..=n.min(12) {
                for i in 0..m {
                    let d: f64 = (0..m).map(|k| g.diff[i * m + k] * g.nodes[k].powi(j as i32)).sum();
                    let exact = j as f64 * g.nodes[i].powi(j as i32 - 1);
                    assert!((d - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "order {n} power {j}: {d} vs {exact}");
                }
            }
            for &x in &g.nodes[1..n] {
                let (_, dp) = legendre(n, x);
                assert!(dp.abs() <= 1e-13 * (n * n) as f64, "order {n}: L′ = {dp:e}");
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let g = lgl_grid(8).unwrap();
        let poly = |x: f64| 1.0 - 2.0 * x + 0.5 * x.powi(5) - x.powi(8);
        let values: Vec<f64> = g.nodes.iter().map(|&x| poly(x)).collect();
        for x in [-0.93, -0.1, 0.333, 0.71] {
            assert!((g.interpolate(&values, x) - poly(x)).abs() < 1e-10);
        }
        assert_eq!(g.interpolate(&values, g.nodes[3]), values[3]);
    }

    #[test]
    fn constant_cost_quadrature() {
        struct Unit(crate::problem::BoxDomain);
        impl ControlProblem for Unit {
            fn name(&self) -> &str {
                "unit"
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn control_dim(&self) -> usize {
                1
            }
            fn initial_time(&self) -> f64 {
                0.0
            }
            fn final_time(&self) -> f64 {
                3.0
            }
            fn domain(&self) -> &crate::problem::BoxDomain {
                &self.0
            }
            fn dynamics<T: Real>(&self, _t: T, _x: &[T], _u: &[T], dx: &mut [T]) -> Result<()> {
                dx[0] = T::zero();
                Ok(())
            }
            fn running_cost<T: Real>(&self, _t: T, _x: &[T], _u: &[T]) -> T {
                T::one()
            }
            fn terminal_cost<T: Real>(&self, _x: &[T]) -> T {
                T::zero()
            }
            fn optimal_control<T: Real>(&self, _t: T, _x: &[T], _l: &[T], u: &mut [T]) {
                u[0] = T::zero();
            }
        }
        let p = Unit(crate::problem::BoxDomain::symmetric(&[1.0]));
        for n in [4, 9] {
            let nlp = transcribe(&p, 0.0, &[0.2], n, 1e-6).unwrap();
            assert!((nlp.objective(&vec![0.3; nlp.num_vars()]) - 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn analytic_trajectory_is_nearly_feasible() {
        let p = Lqr::new(1.0);
        let nlp = transcribe(&p, 0.0, &[1.0], 16, 1e-6).unwrap();
        let mut z = vec![0.0; nlp.num_vars()];
        for k in 0..nlp.nodes() {
            let x = Lqr::trajectory(0.0, 1.0, nlp.time(k));
            z[k] = x;
            z[nlp.nodes() + k] = -x;
        }
        assert!(nlp.max_violation(&z).unwrap() <= 1e-6);
        assert!(nlp.endpoint(&z).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn penalty_gradient_matches_differences() {
        let p = RigidBody::new(RigidBodyParams::default()).unwrap();
        let nlp = transcribe(&p, 0.0, &[0.2, -0.1, 0.3, 0.05, 0.0, -0.05], 4, 1e-6).unwrap();
        let z: Vec<f64> = (0..nlp.num_vars()).map(|i| 0.1 * ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let nu: Vec<f64> = (0..nlp.nodes() * 6 + 6).map(|i| 0.01 * i as f64).collect();
        let mut g = vec![0.0; z.len()];
        nlp.penalty(&z, &nu, 7.0, &mut g).unwrap();
        let mut scratch = vec![0.0; z.len()];
        for i in (0..z.len()).step_by(5) {
            let h = 1e-6;
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] += h;
            zm[i] -= h;
            let fd = (nlp.penalty(&zp, &nu, 7.0, &mut scratch).unwrap() - nlp.penalty(&zm, &nu, 7.0, &mut scratch).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn penalty_hessian_matches_gradient_differences() {
        let p = RigidBody::new(RigidBodyParams::default()).unwrap();
        let nlp = transcribe(&p, 0.0, &[0.2, -0.1, 0.3, 0.05, 0.0, -0.05], 4, 1e-6).unwrap();
        let nv = nlp.num_vars();
        let z: Vec<f64> = (0..nv).map(|i| 0.1 * ((i * 5 % 13) as f64 - 6.0) / 6.0).collect();
        let nu: Vec<f64> = (0..nlp.nodes() * 6 + 6).map(|i| 0.02 * i as f64 - 0.3).collect();
        let hess = nlp.penalty_hessian(&z, &nu, 3.0).unwrap();
        let (mut gp, mut gm) = (vec![0.0; nv], vec![0.0; nv]);
        for j in (0..nv).step_by(4) {
            let h = 1e-6;
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += h;
            zm[j] -= h;
            nlp.penalty(&zp, &nu, 3.0, &mut gp).unwrap();
            nlp.penalty(&zm, &nu, 3.0, &mut gm).unwrap();
            for i in 0..nv {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((fd - hess[i * nv + j]).abs() <= 1e-5 * (1.0 + fd.abs()), "({i},{j}): {fd} vs {}", hess[i * nv + j]);
            }
        }
    }

    #[test]
    fn lqr_value_and_trajectory() {
        let p = Lqr::new(1.0);
        let sol = solve_ps(&p, 0.0, &[1.0], &PsConfig::default()).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-4, "{}", sol.value);
        assert!(sol.report.max_defect <= 1e-6);
        let (x, u) = interpolate_solution(&sol, 0.5).unwrap();
        assert!((x[0] - (-0.5f64).exp()).abs() < 1e-4);
        assert!((u[0] + x[0]).abs() < 1e-3);
        let (x, _) = interpolate_solution(&sol, sol.times[5]).unwrap();
        assert_eq!(x, sol.states[5]);
    }

    #[test]
    fn rigid_body_equilibrium() {
        let p = RigidBody::new(RigidBodyParams::default()).unwrap();
        let sol = solve_ps(&p, 0.0, &[0.0; 6], &PsConfig { order: 8, ..Default::default() }).unwrap();
        assert!(sol.value.abs() < 1e-6);
        assert!(sol.controls.iter().flatten().all(|u| u.abs() < 1e-6));
    }

    #[test]
    fn order_below_four_rejected() {
        assert!(transcribe(&Lqr::new(1.0), 0.0, &[1.0], 3, 1e-6).is_err());
    }
}
