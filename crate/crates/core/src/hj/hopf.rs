use std::cell::Cell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HjbError, Result};
use crate::linalg::invert_dense;
use crate::optim::{lbfgs, LbfgsConfig};

type Oracle = dyn Fn(&[f64], &mut [f64]) -> f64 + Send + Sync;

/// Convex function with gradient; quadratics carry a closed-form conjugate.
#[derive(Clone)]
pub enum Convex {
    /// `½ xᵀ A x + cᵀ x + d` with `A` symmetric positive definite (row-major).
    Quadratic { a: Vec<f64>, c: Vec<f64>, d: f64 },
    /// Arbitrary smooth convex function writing its gradient.
    Custom(Arc<Oracle>),
}

impl std::fmt::Debug for Convex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Convex::Quadratic { a, c, d } => write!(f, "Quadratic {{ a: {a:?}, c: {c:?}, d: {d} }}"),
            Convex::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Convex {
    /// `½‖x‖²` in `ℝⁿ`.
    pub fn half_norm(n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        Convex::Quadratic { a, c: vec![0.0; n], d: 0.0 }
    }

    pub fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Convex::Quadratic { a, c, d } => {
                let n = x.len();
                let mut v = *d;
                for i in 0..n {
                    let ax: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum();
                    grad[i] = ax + c[i];
                    v += 0.5 * x[i] * ax + c[i] * x[i];
                }
                v
            }
            Convex::Custom(f) => f(x, grad),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.eval(x, &mut g)
    }

    /// Closed-form conjugate `½ (z − c)ᵀ A⁻¹ (z − c) − d` for quadratics.
    fn closed_conjugate(&self, z: &[f64], grad: &mut [f64]) -> Option<f64> {
        match self {
            Convex::Quadratic { a, c, d } => {
                let n = z.len();
                let inv = invert_dense(a, n).ok()?;
                let r: Vec<f64> = z.iter().zip(c).map(|(u, v)| u - v).collect();
                let mut v = -d;
                for i in 0..n {
                    grad[i] = (0..n).map(|j| inv[i * n + j] * r[j]).sum();
                    v += 0.5 * r[i] * grad[i];
                }
                Some(v)
            }
            Convex::Custom(_) => None,
        }
    }
}

/// `V_t + H(V_x) = 0`, `V(0, x) = ψ(x)` with convex `ψ`.
#[derive(Debug, Clone)]
pub struct HopfProblem {
    pub dim: usize,
    pub hamiltonian: Convex,
    pub initial: Convex,
}

impl HopfProblem {
    /// Problems selectable by identifier.
    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        match name {
            "quadratic" => Ok(HopfProblem { dim, hamiltonian: Convex::half_norm(dim), initial: Convex::half_norm(dim) }),
            other => Err(HjbError::InvalidInput(format!("unknown Hopf problem '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfConfig {
    pub starts: usize,
    pub seed: u64,
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for HopfConfig {
    fn default() -> Self {
        HopfConfig { starts: 8, seed: 0, gtol: 1e-8, max_iter: 2000 }
    }
}

const UNBOUNDED: f64 = 1e12;

/// `f*(z) = sup_x {xᵀz − f(x)}` by multi-start L-BFGS; also returns the
/// maximizer (the conjugate's gradient).
pub fn fenchel_conjugate(f: &Convex, z: &[f64], cfg: &HopfConfig) -> Result<(f64, Vec<f64>)> {
    let n = z.len();
    let blew_up = Cell::new(false);
    let lcfg = LbfgsConfig { gtol: cfg.gtol, max_iter: cfg.max_iter, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..cfg.starts.max(1) {
        let x0: Vec<f64> = if k == 0 { vec![0.0; n] } else { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
        let objective = |x: &[f64], g: &mut [f64]| -> Result<f64> {
            let v = f.eval(x, g) - x.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            for (gi, zi) in g.iter_mut().zip(z) {
                *gi -= zi;
            }
            if v < -UNBOUNDED {
                blew_up.set(true);
                return Err(HjbError::Unbounded);
            }
            Ok(v)
        };
        let m = lbfgs(objective, &x0, &lcfg, |_, _, _| {})?;
        if blew_up.get() {
            return Err(HjbError::Unbounded);
        }
        if m.converged && best.as_ref().map_or(true, |(v, _)| -m.value > *v) {
            best = Some((-m.value, m.x));
        }
    }
    best.ok_or_else(|| HjbError::NoConvergence("conjugate: gradient tolerance unmet at every start".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopfResult {
    pub value: f64,
    pub minimizer: Vec<f64>,
    pub converged_starts: usize,
}

/// `V(t, x) = −min_v {ψ*(v) + t H(v) − xᵀv}`.
pub fn hopf_solve(problem: &HopfProblem, t: f64, x: &[f64], cfg: &HopfConfig) -> Result<HopfResult> {
    if !(t >= 0.0) || x.len() != problem.dim {
        return Err(HjbError::InvalidInput("Hopf formula needs t ≥ 0 and x of the problem dimension".into()));
    }
    let n = problem.dim;
    let inner = HopfConfig { starts: 2, ..*cfg };
    let failure: Cell<Option<HjbError>> = Cell::new(None);
    let objective = |v: &[f64], g: &mut [f64]| -> Result<f64> {
        let mut gh = vec![0.0; n];
        let psi_star = match problem.initial.closed_conjugate(v, g) {
            Some(val) => val,
            None => {
                let (val, arg) = fenchel_conjugate(&problem.initial, v, &inner).inspect_err(|e| {
                    if *e == HjbError::Unbounded {
                        failure.set(Some(HjbError::Unbounded));
                    }
                })?;
                g.copy_from_slice(&arg);
                val
            }
        };
        let h = problem.hamiltonian.eval(v, &mut gh);
        let mut total = psi_star + t * h;
        for i in 0..n {
            total -= x[i] * v[i];
            g[i] += t * gh[i] - x[i];
        }
        Ok(total)
    };
    // starts: the t = 0 minimizer ∇ψ(x), the origin, and seeded draws in a box
    // scaled by ‖x‖ / max(t, 1)
    let mut grad_psi = vec![0.0; n];
    problem.initial.eval(x, &mut grad_psi);
    let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let half = 1.0 + xnorm / t.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lcfg = LbfgsConfig { gtol: cfg.gtol, max_iter: cfg.max_iter, ..Default::default() };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut converged = 0;
    for k in 0..cfg.starts.max(1) {
        let v0: Vec<f64> = match k {
            0 => grad_psi.clone(),
            1 => vec![0.0; n],
            _ => (0..n).map(|_| rng.gen_range(-half..half)).collect(),
        };
        let m = lbfgs(&objective, &v0, &lcfg, |_, _, _| {})?;
        if let Some(e) = failure.take() {
            return Err(e);
        }
        log::trace!("hopf start {k}: value {} grad {} converged {}", m.value, m.grad_norm, m.converged);
        if m.converged {
            converged += 1;
            if best.as_ref().map_or(true, |(b, _)| m.value < *b) {
                best = Some((m.value, m.x));
            }
        }
    }
    match best {
        Some((v, arg)) => Ok(HopfResult { value: -v, minimizer: arg, converged_starts: converged }),
        None => Err(HjbError::NoConvergence("Hopf minimization: gradient tolerance unmet at every start".into())),
    }
}
