//! Deterministic optimal control problems.
//!
//! A problem supplies the dynamics `f`, running cost `L`, terminal cost `ψ`
//! and the Hamiltonian-minimizing control `u*(t, x, λ)`. Everything else the
//! solvers need (the Hamiltonian, `ψ_x`, `−H_x`, the characteristic vector
//! field) is derived here, by forward-mode differentiation unless a problem
//! overrides it.

mod lqr;
mod rigid_body;

pub use lqr::Lqr;
pub use rigid_body::{euler_kinematics, rotation, skew, Mat3, RigidBody, RigidBodyParams};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HjbError, Result};
use crate::scalar::{Dual, Real};

/// Axis-aligned box in state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(HjbError::InvalidInput("degenerate sampling box".into()));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn symmetric(half_widths: &[f64]) -> Self {
        BoxDomain {
            lower: half_widths.iter().map(|h| -h).collect(),
            upper: half_widths.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| l + (u - l) * rng.gen::<f64>())
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (u - l))
            .collect()
    }
}

/// A deterministic optimal control problem
/// `min ∫ L dt + ψ(x(tf))` subject to `ẋ = f(t, x, u)`.
///
/// Methods are generic over the scalar so that the same definition is
/// evaluated in `f64` and in (nested) dual numbers.
pub trait ControlProblem: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn initial_time(&self) -> f64;
    fn final_time(&self) -> f64;
    fn domain(&self) -> &BoxDomain;

    fn dynamics<T: Real>(&self, t: T, x: &[T], u: &[T], dx: &mut [T]) -> Result<()>;
    fn running_cost<T: Real>(&self, t: T, x: &[T], u: &[T]) -> T;
    fn terminal_cost<T: Real>(&self, x: &[T]) -> T;
    /// Minimizer of `u ↦ H(t, x, λ, u)`.
    fn optimal_control<T: Real>(&self, t: T, x: &[T], lambda: &[T], u: &mut [T]);

    /// `H = L + λᵀ f`.
    fn hamiltonian<T: Real>(&self, t: T, x: &[T], lambda: &[T], u: &[T]) -> Result<T> {
        let mut f = vec![T::zero(); self.state_dim()];
        self.dynamics(t, x, u, &mut f)?;
        let mut h = self.running_cost(t, x, u);
        for (l, fi) in lambda.iter().zip(&f) {
            h += *l * *fi;
        }
        Ok(h)
    }

    fn terminal_gradient<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut seeded: Vec<Dual<T>> = x.iter().map(|&v| Dual::constant(v)).collect();
        (0..x.len())
            .map(|i| {
                seeded[i].eps = T::one();
                let g = self.terminal_cost(&seeded).eps;
                seeded[i].eps = T::zero();
                g
            })
            .collect()
    }

    /// `−H_x(t, x, λ, u*)` with `u*` held fixed during the partial derivative.
    fn costate_rhs<T: Real>(&self, t: T, x: &[T], lambda: &[T], out: &mut [T]) -> Result<()> {
        let n = self.state_dim();
        let mut u = vec![T::zero(); self.control_dim()];
        self.optimal_control(t, x, lambda, &mut u);
        let ud: Vec<Dual<T>> = u.iter().map(|&v| Dual::constant(v)).collect();
        let ld: Vec<Dual<T>> = lambda.iter().map(|&v| Dual::constant(v)).collect();
        let mut xd: Vec<Dual<T>> = x.iter().map(|&v| Dual::constant(v)).collect();
        let td = Dual::constant(t);
        for i in 0..n {
            xd[i].eps = T::one();
            out[i] = -self.hamiltonian(td, &xd, &ld, &ud)?.eps;
            xd[i].eps = T::zero();
        }
        Ok(())
    }

    /// Vector field of the characteristic system in `y = (x, λ, w)`:
    /// `ẋ = f`, `λ̇ = −H_x`, `ẇ = −L`, all at `u*(t, x, λ)`.
    fn characteristic_rhs<T: Real>(&self, t: T, y: &[T], dy: &mut [T]) -> Result<()> {
        let n = self.state_dim();
        let (x, rest) = y.split_at(n);
        let lambda = &rest[..n];
        let mut u = vec![T::zero(); self.control_dim()];
        self.optimal_control(t, x, lambda, &mut u);
        self.dynamics(t, x, &u, &mut dy[..n])?;
        self.costate_rhs(t, x, lambda, &mut dy[n..2 * n])?;
        dy[2 * n] = -self.running_cost(t, x, &u);
        Ok(())
    }
}

/// Problems selectable by identifier.
#[derive(Debug, Clone)]
pub enum Problem {
    Lqr(Lqr),
    RigidBody(RigidBody),
}

impl Problem {
    pub const NAMES: [&'static str; 2] = ["lqr", "rigid_body"];

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "lqr" => Ok(Problem::Lqr(Lqr::default())),
            "rigid_body" => Ok(Problem::RigidBody(RigidBody::new(RigidBodyParams::default())?)),
            other => Err(HjbError::InvalidInput(format!("unknown problem '{other}'"))),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Problem::Lqr($p) => $e,
            Problem::RigidBody($p) => $e,
        }
    };
}

impl ControlProblem for Problem {
    fn name(&self) -> &str {
        delegate!(self, p => p.name())
    }
    fn state_dim(&self) -> usize {
        delegate!(self, p => p.state_dim())
    }
    fn control_dim(&self) -> usize {
        delegate!(self, p => p.control_dim())
    }
    fn initial_time(&self) -> f64 {
        delegate!(self, p => p.initial_time())
    }
    fn final_time(&self) -> f64 {
        delegate!(self, p => p.final_time())
    }
    fn domain(&self) -> &BoxDomain {
        delegate!(self, p => p.domain())
    }
    fn dynamics<T: Real>(&self, t: T, x: &[T], u: &[T], dx: &mut [T]) -> Result<()> {
        delegate!(self, p => p.dynamics(t, x, u, dx))
    }
    fn running_cost<T: Real>(&self, t: T, x: &[T], u: &[T]) -> T {
        delegate!(self, p => p.running_cost(t, x, u))
    }
    fn terminal_cost<T: Real>(&self, x: &[T]) -> T {
        delegate!(self, p => p.terminal_cost(x))
    }
    fn optimal_control<T: Real>(&self, t: T, x: &[T], lambda: &[T], u: &mut [T]) {
        delegate!(self, p => p.optimal_control(t, x, lambda, u))
    }
    fn terminal_gradient<T: Real>(&self, x: &[T]) -> Vec<T> {
        delegate!(self, p => p.terminal_gradient(x))
    }
    fn costate_rhs<T: Real>(&self, t: T, x: &[T], lambda: &[T], out: &mut [T]) -> Result<()> {
        delegate!(self, p => p.costate_rhs(t, x, lambda, out))
    }
}

type Dual2 = Dual<Dual<f64>>;

/// Numeric `argmin_u H` for Hamiltonians that are not quadratic in `u`.
///
/// Projected Newton with exact gradient and Hessian from nested duals and a
/// backtracking safeguard on `h`. `bounds`, when given, is a box that the
/// iterates are clamped to.
pub fn minimize_control<F>(
    h: F,
    u0: &[f64],
    bounds: Option<(&[f64], &[f64])>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>>
where
    F: Fn(&[Dual2]) -> Dual2,
{
    let m = u0.len();
    let project = |u: &mut [f64]| {
        if let Some((lo, hi)) = bounds {
            for i in 0..m {
                u[i] = u[i].clamp(lo[i], hi[i]);
            }
        }
    };
    let value = |u: &[f64]| {
        let z: Vec<Dual2> = u.iter().map(|&v| Dual::constant(Dual::constant(v))).collect();
        h(&z).re.re
    };
    let mut u = u0.to_vec();
    project(&mut u);
    for _ in 0..max_iter {
        let mut grad = vec![0.0; m];
        let mut hess = vec![0.0; m * m];
        for j in 0..m {
            for i in 0..m {
                let z: Vec<Dual2> = (0..m)
                    .map(|k| {
                        Dual::new(
                            Dual::new(u[k], if k == i { 1.0 } else { 0.0 }),
                            Dual::constant(if k == j { 1.0 } else { 0.0 }),
                        )
                    })
                    .collect();
                let out = h(&z);
                hess[i * m + j] = out.eps.eps;
                if j == 0 {
                    grad[i] = out.re.eps;
                }
            }
        }
        // free-variable gradient norm (active bound components excluded)
        let mut gnorm: f64 = 0.0;
        for i in 0..m {
            let active = bounds.is_some_and(|(lo, hi)| {
                (u[i] <= lo[i] && grad[i] > 0.0) || (u[i] >= hi[i] && grad[i] < 0.0)
            });
            if !active {
                gnorm = gnorm.max(grad[i].abs());
            }
        }
        if !gnorm.is_finite() {
            return Err(HjbError::NonFiniteValue { context: "minimize_control", at: f64::NAN });
        }
        if gnorm <= tol {
            return Ok(u);
        }
        let mut step = grad.clone();
        if crate::linalg::solve_dense(&mut hess, &mut step, m).is_err()
            || step.iter().zip(&grad).map(|(s, g)| s * g).sum::<f64>() <= 0.0
        {
            step = grad.clone();
        }
        let h0 = value(&u);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a - alpha * s).collect();
            project(&mut trial);
            if value(&trial) <= h0 {
                u = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(u);
        }
    }
    Err(HjbError::NoConvergence("control minimization".into()))
}
