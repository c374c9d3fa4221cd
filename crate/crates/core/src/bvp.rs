//! Collocation solver for the characteristic two-point boundary value problem
//!
//! ```text
//! ẋ = f(t, x, u*),  λ̇ = −H_x,  ẇ = −L,
//! x(t0) = x0,  λ(tf) = ψ_x(x(tf)),  w(tf) = ψ(x(tf))
//! ```
//!
//! discretized by 3-stage Lobatto IIIa (the cubic collocation scheme of the
//! classical BVP codes), solved by damped Newton on a banded Jacobian, with
//! mesh refinement driven by the continuous residual of the cubic interpolant.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{HjbError, Result};
use crate::integrate::{hermite, OdeSolution};
use crate::linalg::BandMatrix;
use crate::problem::ControlProblem;
use crate::scalar::{Dual, Real};

/// Autonomous-or-not vector field `ẏ = F(t, y)` evaluable in any scalar.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval<T: Real>(&self, t: T, y: &[T], dy: &mut [T]) -> Result<()>;
}

/// The characteristic system of a control problem in `y = (x, λ, w)`.
pub struct Characteristic<'a, P: ?Sized>(pub &'a P);

impl<P: ControlProblem + ?Sized> VectorField for Characteristic<'_, P> {
    fn dim(&self) -> usize {
        2 * self.0.state_dim() + 1
    }
    fn eval<T: Real>(&self, t: T, y: &[T], dy: &mut [T]) -> Result<()> {
        self.0.characteristic_rhs(t, y, dy)
    }
}

fn eval_checked<V: VectorField>(field: &V, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
    field.eval(t, y, dy)?;
    if dy.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HjbError::NonFiniteValue { context: "characteristic vector field", at: t })
    }
}

/// Row-major `d × d` Jacobian `∂F/∂y` by forward-mode duals.
fn jacobian<V: VectorField>(field: &V, t: f64, y: &[f64], jac: &mut [f64]) -> Result<()> {
    let d = y.len();
    let mut yd: Vec<Dual<f64>> = y.iter().map(|&v| Dual::constant(v)).collect();
    let mut out = vec![Dual::constant(0.0); d];
    for j in 0..d {
        yd[j].eps = 1.0;
        field.eval(Dual::constant(t), &yd, &mut out)?;
        yd[j].eps = 0.0;
        for i in 0..d {
            jac[i * d + j] = out[i].eps;
        }
    }
    if jac.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HjbError::NonFiniteValue { context: "characteristic Jacobian", at: t })
    }
}

/// Initial trajectory for the Newton iteration.
///
/// A base trajectory on `mesh` read through the time map
/// `s = mesh[0] + (t − mesh[0])·time_scale`, clamped to the base end values,
/// over the domain `[mesh[0], horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Guess {
    pub mesh: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Time derivatives at the mesh; enables cubic Hermite evaluation.
    pub slopes: Option<Vec<Vec<f64>>>,
    pub time_scale: f64,
    pub horizon: f64,
}

impl Guess {
    pub fn new(mesh: Vec<f64>, values: Vec<Vec<f64>>, slopes: Option<Vec<Vec<f64>>>) -> Self {
        let horizon = mesh[mesh.len() - 1];
        Guess { mesh, values, slopes, time_scale: 1.0, horizon }
    }

    pub fn constant(t0: f64, tf: f64, y: Vec<f64>) -> Self {
        Guess::new(vec![t0, tf], vec![y.clone(), y], None)
    }

    /// `x ≡ x0`, `λ ≡ ψ_x(x0)`, `w ≡ ψ(x0)`.
    pub fn trivial<P: ControlProblem + ?Sized>(p: &P, t0: f64, x0: &[f64]) -> Self {
        let mut y = x0.to_vec();
        y.extend(p.terminal_gradient(x0));
        y.push(p.terminal_cost(x0));
        Guess::constant(t0, p.final_time(), y)
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn start(&self) -> f64 {
        self.mesh[0]
    }

    pub fn end(&self) -> f64 {
        self.horizon
    }

    /// Base mesh mapped to guess time, restricted to the domain.
    pub fn mapped_mesh(&self) -> Vec<f64> {
        let t0 = self.mesh[0];
        self.mesh
            .iter()
            .map(|&s| t0 + (s - t0) / self.time_scale)
            .take_while(|&t| t <= self.horizon)
            .collect()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let t = self.mesh[0] + (t - self.mesh[0]) * self.time_scale;
        let n = self.mesh.len();
        if n == 1 || t <= self.mesh[0] {
            return self.values[0].clone();
        }
        if t >= self.mesh[n - 1] {
            return self.values[n - 1].clone();
        }
        let i = self.mesh.partition_point(|&s| s <= t) - 1;
        if self.mesh[i] == t {
            return self.values[i].clone();
        }
        let (a, b) = (self.mesh[i], self.mesh[i + 1]);
        match &self.slopes {
            Some(s) => hermite(a, b, &self.values[i], &self.values[i + 1], &s[i], &s[i + 1], t),
            None => {
                let r = (t - a) / (b - a);
                self.values[i]
                    .iter()
                    .zip(&self.values[i + 1])
                    .map(|(u, v)| u + r * (v - u))
                    .collect()
            }
        }
    }
}

impl From<&BvpSolution> for Guess {
    fn from(sol: &BvpSolution) -> Self {
        Guess::new(sol.mesh.clone(), sol.y.clone(), Some(sol.f.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvpOptions {
    /// Newton tolerance on the scaled discrete residual.
    pub tol: f64,
    /// Tolerance on the relative continuous residual of the interpolant.
    pub mesh_tol: f64,
    pub initial_intervals: usize,
    pub max_points: usize,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub max_refinements: usize,
}

impl Default for BvpOptions {
    fn default() -> Self {
        BvpOptions {
            tol: 1e-8,
            mesh_tol: 1e-6,
            initial_intervals: 32,
            max_points: 10_000,
            max_newton: 30,
            max_halvings: 8,
            max_refinements: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub newton_iterations: usize,
    pub final_residual: f64,
    /// Largest relative continuous residual over the final mesh.
    pub residual_estimate: f64,
    pub mesh_points: usize,
    /// Order of the collocation scheme.
    pub order: usize,
    pub wall_time: f64,
}

/// Converged characteristic trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub state_dim: usize,
    pub mesh: Vec<f64>,
    /// `y = (x, λ, w)` per mesh point.
    pub y: Vec<Vec<f64>>,
    /// `ẏ` per mesh point.
    pub f: Vec<Vec<f64>>,
    pub report: SolveReport,
}

impl BvpSolution {
    pub fn t0(&self) -> f64 {
        self.mesh[0]
    }

    pub fn tf(&self) -> f64 {
        self.mesh[self.mesh.len() - 1]
    }

    /// `V(t0, x0) = w(t0)`.
    pub fn value(&self) -> f64 {
        self.y[0][2 * self.state_dim]
    }

    /// `λ(t0)`.
    pub fn costate0(&self) -> &[f64] {
        &self.y[0][self.state_dim..2 * self.state_dim]
    }

    /// Cubic interpolant of `y` at `t` (clamped to the mesh).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let n = self.mesh.len();
        if t <= self.mesh[0] {
            return self.y[0].clone();
        }
        if t >= self.mesh[n - 1] {
            return self.y[n - 1].clone();
        }
        let i = self.mesh.partition_point(|&s| s <= t) - 1;
        if self.mesh[i] == t {
            return self.y[i].clone();
        }
        hermite(self.mesh[i], self.mesh[i + 1], &self.y[i], &self.y[i + 1], &self.f[i], &self.f[i + 1], t)
    }

    pub fn to_ode_solution(&self) -> OdeSolution<f64> {
        OdeSolution { times: self.mesh.clone(), states: self.y.clone(), derivs: self.f.clone() }
    }

    /// Largest deviation of `H(t, x, λ, u*)` from its value at `t0`.
    pub fn hamiltonian_drift<P: ControlProblem + ?Sized>(&self, p: &P) -> Result<f64> {
        let n = self.state_dim;
        let mut u = vec![0.0; p.control_dim()];
        let mut h0 = None;
        let mut drift: f64 = 0.0;
        for (t, y) in self.mesh.iter().zip(&self.y) {
            let (x, lam) = (&y[..n], &y[n..2 * n]);
            p.optimal_control(*t, x, lam, &mut u);
            let h = p.hamiltonian(*t, x, lam, &u)?;
            let h0 = *h0.get_or_insert(h);
            drift = drift.max((h - h0).abs());
        }
        Ok(drift)
    }
}

/// Cubic interpolant value and derivative on `[a, a + h]` at `a + s h`.
fn cubic_at(h: f64, s: f64, y0: &[f64], y1: &[f64], f0: &[f64], f1: &[f64], val: &mut [f64], der: &mut [f64]) {
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let d00 = (6.0 * s2 - 6.0 * s) / h;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = (-6.0 * s2 + 6.0 * s) / h;
    let d11 = 3.0 * s2 - 2.0 * s;
    for k in 0..y0.len() {
        val[k] = h00 * y0[k] + h * h10 * f0[k] + h01 * y1[k] + h * h11 * f1[k];
        der[k] = d00 * y0[k] + d10 * f0[k] + d01 * y1[k] + d11 * f1[k];
    }
}

fn midpoint(h: f64, y0: &[f64], y1: &[f64], f0: &[f64], f1: &[f64], out: &mut [f64]) {
    for k in 0..y0.len() {
        out[k] = 0.5 * (y0[k] + y1[k]) - h / 8.0 * (f1[k] - f0[k]);
    }
}

/// Scaled Lobatto IIIa residual `max |rᵢ| / (hᵢ (1 + |f_m|))` of a candidate
/// mesh solution; `+∞` if the field cannot be evaluated.
pub fn collocation_residual<V: VectorField>(field: &V, mesh: &[f64], y: &[Vec<f64>]) -> f64 {
    let d = field.dim();
    let mut f: Vec<Vec<f64>> = vec![vec![0.0; d]; mesh.len()];
    for (i, (t, yi)) in mesh.iter().zip(y).enumerate() {
        if eval_checked(field, *t, yi, &mut f[i]).is_err() {
            return f64::INFINITY;
        }
    }
    let mut ym = vec![0.0; d];
    let mut fm = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for i in 0..mesh.len() - 1 {
        let h = mesh[i + 1] - mesh[i];
        midpoint(h, &y[i], &y[i + 1], &f[i], &f[i + 1], &mut ym);
        if eval_checked(field, mesh[i] + 0.5 * h, &ym, &mut fm).is_err() {
            return f64::INFINITY;
        }
        for k in 0..d {
            let r = y[i + 1][k] - y[i][k] - h / 6.0 * (f[i][k] + 4.0 * fm[k] + f[i + 1][k]);
            worst = worst.max(r.abs() / (h * (1.0 + fm[k].abs())));
        }
    }
    worst
}

/// Convenience wrapper for the characteristic system of `p`.
pub fn characteristic_residual<P: ControlProblem + ?Sized>(p: &P, mesh: &[f64], y: &[Vec<f64>]) -> f64 {
    collocation_residual(&Characteristic(p), mesh, y)
}

/// Discrete system on a fixed mesh.
struct Collocation<'a, P: ?Sized> {
    p: &'a P,
    field: Characteristic<'a, P>,
    x0: &'a [f64],
    mesh: Vec<f64>,
    n: usize,
    d: usize,
}

struct Eval {
    /// Scaled residual vector.
    res: Vec<f64>,
    /// Unscaled residual (right-hand side of the Newton system).
    raw: Vec<f64>,
    f: Vec<Vec<f64>>,
}

impl<P: ControlProblem + ?Sized> Collocation<'_, P> {
    fn size(&self) -> usize {
        self.mesh.len() * self.d
    }

    fn residual(&self, y: &[f64], with_midpoints: Option<&mut Vec<Vec<f64>>>) -> Result<Eval> {
        let (n, d) = (self.n, self.d);
        let npts = self.mesh.len();
        let mut f = vec![vec![0.0; d]; npts];
        for i in 0..npts {
            eval_checked(&self.field, self.mesh[i], &y[i * d..(i + 1) * d], &mut f[i])?;
        }
        let mut raw = vec![0.0; npts * d];
        let mut res = vec![0.0; npts * d];
        for k in 0..n {
            raw[k] = y[k] - self.x0[k];
            res[k] = raw[k] / (1.0 + self.x0[k].abs());
        }
        let mut ym = vec![0.0; d];
        let mut fm = vec![0.0; d];
        let mut mids = with_midpoints;
        for i in 0..npts - 1 {
            let h = self.mesh[i + 1] - self.mesh[i];
            let (yi, yj) = (&y[i * d..(i + 1) * d], &y[(i + 1) * d..(i + 2) * d]);
            midpoint(h, yi, yj, &f[i], &f[i + 1], &mut ym);
            eval_checked(&self.field, self.mesh[i] + 0.5 * h, &ym, &mut fm)?;
            for k in 0..d {
                let r = yj[k] - yi[k] - h / 6.0 * (f[i][k] + 4.0 * fm[k] + f[i + 1][k]);
                raw[n + i * d + k] = r;
                res[n + i * d + k] = r / (h * (1.0 + fm[k].abs()));
            }
            if let Some(m) = mids.as_deref_mut() {
                m.push(ym.clone());
            }
        }
        let base = (npts - 1) * d;
        let xf = &y[base..base + n];
        let grad = self.p.terminal_gradient(xf);
        for k in 0..n {
            let r = y[base + n + k] - grad[k];
            raw[n + base + k] = r;
            res[n + base + k] = r / (1.0 + grad[k].abs());
        }
        let psi = self.p.terminal_cost(xf);
        let r = y[base + 2 * n] - psi;
        raw[n + base + n] = r;
        res[n + base + n] = r / (1.0 + psi.abs());
        if res.iter().any(|v| !v.is_finite()) {
            return Err(HjbError::NonFiniteValue { context: "collocation residual", at: self.mesh[0] });
        }
        Ok(Eval { res, raw, f })
    }

    fn jacobian(&self, y: &[f64], ev: &Eval) -> Result<BandMatrix> {
        let (n, d) = (self.n, self.d);
        let npts = self.mesh.len();
        let mut band = BandMatrix::zeros(self.size(), n + d - 1, 2 * d - 1 - n);
        let mut a: Vec<Vec<f64>> = vec![vec![0.0; d * d]; npts];
        for i in 0..npts {
            jacobian(&self.field, self.mesh[i], &y[i * d..(i + 1) * d], &mut a[i])?;
        }
        for k in 0..n {
            band.add(k, k, 1.0);
        }
        let mut ym = vec![0.0; d];
        let mut am = vec![0.0; d * d];
        for i in 0..npts - 1 {
            let h = self.mesh[i + 1] - self.mesh[i];
            let (yi, yj) = (&y[i * d..(i + 1) * d], &y[(i + 1) * d..(i + 2) * d]);
            midpoint(h, yi, yj, &ev.f[i], &ev.f[i + 1], &mut ym);
            jacobian(&self.field, self.mesh[i] + 0.5 * h, &ym, &mut am)?;
            let row0 = n + i * d;
            for r in 0..d {
                for c in 0..d {
                    // (A_m (I/2 ± h/8 A_{i,i+1}))[r][c]
                    let mut pi = 0.5 * am[r * d + c];
                    let mut pj = 0.5 * am[r * d + c];
                    for k in 0..d {
                        let amk = am[r * d + k];
                        if amk != 0.0 {
                            pi += amk * h / 8.0 * a[i][k * d + c];
                            pj -= amk * h / 8.0 * a[i + 1][k * d + c];
                        }
                    }
                    let eye = if r == c { 1.0 } else { 0.0 };
                    let ji = -eye - h / 6.0 * (a[i][r * d + c] + 4.0 * pi);
                    let jj = eye - h / 6.0 * (a[i + 1][r * d + c] + 4.0 * pj);
                    band.add(row0 + r, i * d + c, ji);
                    band.add(row0 + r, (i + 1) * d + c, jj);
                }
            }
        }
        // terminal rows: λ − ψ_x(x), w − ψ(x)
        let base = (npts - 1) * d;
        let xf = &y[base..base + n];
        let row0 = n + base;
        let mut seeded: Vec<Dual<f64>> = xf.iter().map(|&v| Dual::constant(v)).collect();
        for j in 0..n {
            seeded[j].eps = 1.0;
            let g = self.p.terminal_gradient(&seeded);
            seeded[j].eps = 0.0;
            for k in 0..n {
                band.add(row0 + k, base + j, -g[k].eps);
            }
        }
        let (_, grad) = crate::scalar::dual_diff(|z: &[Dual<f64>]| self.p.terminal_cost(z), xf)?;
        for k in 0..n {
            band.add(row0 + k, base + n + k, 1.0);
            band.add(row0 + n, base + k, -grad[k]);
        }
        band.add(row0 + n, base + 2 * n, 1.0);
        Ok(band)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Damped Newton on a fixed mesh. Returns the converged unknowns and the
/// number of iterations.
fn newton<P: ControlProblem + ?Sized>(
    sys: &Collocation<'_, P>,
    mut y: Vec<f64>,
    opts: &BvpOptions,
    iterations: &mut usize,
) -> Result<(Vec<f64>, Eval)> {
    let mut ev = sys.residual(&y, None)?;
    let mut norm = norm2(&ev.res);
    for _ in 0..opts.max_newton {
        if max_abs(&ev.res) <= opts.tol {
            return Ok((y, ev));
        }
        *iterations += 1;
        let mut band = sys.jacobian(&y, &ev)?;
        band.factor()?;
        let mut step = ev.raw.clone();
        band.solve(&mut step);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = y.iter().zip(&step).map(|(a, s)| a - alpha * s).collect();
            if let Ok(tev) = sys.residual(&trial, None) {
                let tn = norm2(&tev.res);
                if tn < (1.0 - 1e-4 * alpha) * norm {
                    accepted = Some((trial, tev, tn));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((ty, tev, tn)) => {
                y = ty;
                ev = tev;
                norm = tn;
            }
            None => {
                return Err(HjbError::MaxIterations { iterations: *iterations, residual: max_abs(&ev.res) });
            }
        }
    }
    if max_abs(&ev.res) <= opts.tol {
        Ok((y, ev))
    } else {
        Err(HjbError::MaxIterations { iterations: *iterations, residual: max_abs(&ev.res) })
    }
}

const GAUSS_OFFSET: f64 = 0.218_217_890_235_992_4; // √21 / 14

/// Relative continuous residual of the cubic interpolant per interval,
/// sampled at the two interior Lobatto-type points.
fn residual_estimates<P: ControlProblem + ?Sized>(
    sys: &Collocation<'_, P>,
    y: &[f64],
    f: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let d = sys.d;
    let mut val = vec![0.0; d];
    let mut der = vec![0.0; d];
    let mut fv = vec![0.0; d];
    let mut out = Vec::with_capacity(sys.mesh.len() - 1);
    for i in 0..sys.mesh.len() - 1 {
        let h = sys.mesh[i + 1] - sys.mesh[i];
        let (yi, yj) = (&y[i * d..(i + 1) * d], &y[(i + 1) * d..(i + 2) * d]);
        let mut worst: f64 = 0.0;
        for s in [0.5 - GAUSS_OFFSET, 0.5 + GAUSS_OFFSET] {
            cubic_at(h, s, yi, yj, &f[i], &f[i + 1], &mut val, &mut der);
            eval_checked(&sys.field, sys.mesh[i] + s * h, &val, &mut fv)?;
            for k in 0..d {
                worst = worst.max((der[k] - fv[k]).abs() / (1.0 + fv[k].abs()));
            }
        }
        out.push(worst);
    }
    Ok(out)
}

fn initial_mesh(t0: f64, tf: f64, guess: &Guess, opts: &BvpOptions) -> Vec<f64> {
    let span = tf - t0;
    let m = opts.initial_intervals.max(1);
    let uniform = |a: f64, k: usize| -> Vec<f64> {
        (1..=k).map(|i| if i == k { tf } else { a + (tf - a) * i as f64 / k as f64 }).collect()
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * span.max(1.0);
    let base = guess.mapped_mesh();
    if close(guess.start(), t0) && close(guess.end(), tf) && base.len() > m {
        let mut mesh = vec![t0];
        for &t in &base[1..] {
            if t - mesh[mesh.len() - 1] > 1e-10 * span && tf - t > 1e-10 * span {
                mesh.push(t);
            }
        }
        let last = mesh[mesh.len() - 1];
        // fill the part of the domain beyond the base trajectory
        let k = ((m as f64) * (tf - last) / span).ceil().max(1.0) as usize;
        mesh.extend(uniform(last, k));
        if mesh.len() <= opts.max_points {
            return mesh;
        }
    }
    let mut mesh = vec![t0];
    mesh.extend(uniform(t0, m));
    mesh
}

/// Solves the characteristic TPBVP from `(t0, x0)` to the problem's final time.
pub fn solve_tpbvp<P: ControlProblem + ?Sized>(
    p: &P,
    t0: f64,
    x0: &[f64],
    guess: &Guess,
    opts: &BvpOptions,
) -> Result<BvpSolution> {
    solve_tpbvp_to(p, t0, p.final_time(), x0, guess, opts)
}

/// As [`solve_tpbvp`] with the terminal conditions imposed at `tf` instead of
/// the problem's final time (used by time marching).
pub fn solve_tpbvp_to<P: ControlProblem + ?Sized>(
    p: &P,
    t0: f64,
    tf: f64,
    x0: &[f64],
    guess: &Guess,
    opts: &BvpOptions,
) -> Result<BvpSolution> {
    let start = Instant::now();
    let n = p.state_dim();
    let d = 2 * n + 1;
    if x0.len() != n || guess.dim() != d {
        return Err(HjbError::InvalidInput(format!(
            "expected state of length {n} and guess of dimension {d}"
        )));
    }
    if !(tf > t0) || !(opts.tol > 0.0) {
        return Err(HjbError::InvalidInput("need tf > t0 and tol > 0".into()));
    }
    let mesh = initial_mesh(t0, tf, guess, opts);
    let mut y: Vec<f64> = mesh.iter().flat_map(|&t| guess.eval(t)).collect();
    let mut sys = Collocation { p, field: Characteristic(p), x0, mesh, n, d };
    let mut iterations = 0;
    for _ in 0..=opts.max_refinements {
        let (ys, ev) = newton(&sys, y, opts, &mut iterations)?;
        let est = residual_estimates(&sys, &ys, &ev.f)?;
        let worst = max_abs(&est);
        if worst <= opts.mesh_tol {
            let npts = sys.mesh.len();
            let report = SolveReport {
                converged: true,
                newton_iterations: iterations,
                final_residual: max_abs(&ev.res),
                residual_estimate: worst,
                mesh_points: npts,
                order: 4,
                wall_time: start.elapsed().as_secs_f64(),
            };
            return Ok(BvpSolution {
                state_dim: n,
                y: ys.chunks(d).map(|c| c.to_vec()).collect(),
                f: ev.f,
                mesh: std::mem::take(&mut sys.mesh),
                report,
            });
        }
        // bisect the worst 20% of intervals (those above tolerance)
        let mut order: Vec<usize> = (0..est.len()).filter(|&i| est[i] > opts.mesh_tol).collect();
        order.sort_by(|&a, &b| est[b].total_cmp(&est[a]).then(a.cmp(&b)));
        order.truncate(((est.len() as f64) * 0.2).ceil().max(1.0) as usize);
        let mut split = vec![0usize; est.len()];
        for &i in &order {
            split[i] = if est[i] > 100.0 * opts.mesh_tol { 2 } else { 1 };
        }
        let added: usize = split.iter().sum();
        if sys.mesh.len() + added > opts.max_points {
            return Err(HjbError::MeshLimitExceeded { points: sys.mesh.len() + added });
        }
        let old = &sys.mesh;
        let mut new_mesh = Vec::with_capacity(old.len() + added);
        let mut new_y = Vec::with_capacity((old.len() + added) * d);
        for i in 0..old.len() - 1 {
            new_mesh.push(old[i]);
            new_y.extend_from_slice(&ys[i * d..(i + 1) * d]);
            let h = old[i + 1] - old[i];
            let mut val = vec![0.0; d];
            let mut der = vec![0.0; d];
            for k in 1..=split[i] {
                let s = k as f64 / (split[i] + 1) as f64;
                cubic_at(h, s, &ys[i * d..(i + 1) * d], &ys[(i + 1) * d..(i + 2) * d], &ev.f[i], &ev.f[i + 1], &mut val, &mut der);
                new_mesh.push(old[i] + s * h);
                new_y.extend_from_slice(&val);
            }
        }
        new_mesh.push(old[old.len() - 1]);
        new_y.extend_from_slice(&ys[ys.len() - d..]);
        sys.mesh = new_mesh;
        y = new_y;
    }
    Err(HjbError::MaxIterations { iterations, residual: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Lqr, Problem};

    struct Constant(Vec<f64>);

    impl VectorField for Constant {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn eval<T: Real>(&self, _t: T, _y: &[T], dy: &mut [T]) -> Result<()> {
            for (o, c) in dy.iter_mut().zip(&self.0) {
                *o = T::from_f64(*c).unwrap();
            }
            Ok(())
        }
    }

    #[test]
    fn residual_zero_for_constant_solution() {
        let mesh = [0.0, 0.3, 1.0];
        let y = vec![vec![2.0, -1.0]; 3];
        assert_eq!(collocation_residual(&Constant(vec![0.0, 0.0]), &mesh, &y), 0.0);
    }

    #[test]
    fn residual_reproduces_linear_exactly() {
        let c = vec![1.5, -0.25];
        let mesh: Vec<f64> = (0..11).map(|i| (i as f64 * 0.1).powi(2)).collect();
        let y: Vec<Vec<f64>> = mesh.iter().map(|&t| vec![1.0 + c[0] * t, c[1] * t]).collect();
        assert!(collocation_residual(&Constant(c), &mesh, &y) <= 1e-14);
    }

    #[test]
    fn residual_grows_with_perturbation() {
        let field = Constant(vec![1.0]);
        let mesh: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
        let mut last = 0.0;
        for eps in [1e-6, 1e-5, 1e-4, 1e-3] {
            let mut y: Vec<Vec<f64>> = mesh.iter().map(|&t| vec![t]).collect();
            y[2][0] += eps;
            let r = collocation_residual(&field, &mesh, &y);
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn lqr_from_zero_guess() {
        let p = Lqr::default();
        let guess = Guess::constant(0.0, 1.0, vec![0.0; 3]);
        let sol = solve_tpbvp(&p, 0.0, &[1.0], &guess, &BvpOptions::default()).unwrap();
        assert!((sol.value() - 0.5).abs() < 1e-6, "{}", sol.value());
        assert!((sol.costate0()[0] - 1.0).abs() < 1e-6);
        assert!(sol.report.converged && sol.report.final_residual <= 1e-8);
        for (t, y) in sol.mesh.iter().zip(&sol.y) {
            assert!((y[0] - Lqr::trajectory(0.0, 1.0, *t)).abs() < 1e-6);
        }
        assert!(sol.hamiltonian_drift(&p).unwrap() < 1e-6);
    }

    #[test]
    fn rigid_body_equilibrium() {
        let p = Problem::by_name("rigid_body").unwrap();
        let x0 = [0.0; 6];
        let sol = solve_tpbvp(&p, 0.0, &x0, &Guess::trivial(&p, 0.0, &x0), &BvpOptions::default()).unwrap();
        assert!(sol.value().abs() < 1e-8);
        assert!(sol.y.iter().all(|y| y.iter().all(|v| v.abs() < 1e-8)));
    }

    #[test]
    fn boundary_conditions_hold() {
        let p = Lqr::new(2.0);
        let sol = solve_tpbvp(&p, 0.5, &[-0.7], &Guess::trivial(&p, 0.5, &[-0.7]), &BvpOptions::default()).unwrap();
        let last = sol.y.last().unwrap();
        assert!((sol.y[0][0] + 0.7).abs() < 1e-8);
        assert!((last[1] - last[0]).abs() < 1e-8);
        assert!((last[2] - 0.5 * last[0] * last[0]).abs() < 1e-8);
        assert_eq!(sol.t0(), 0.5);
        assert_eq!(sol.tf(), 2.0);
    }
}
