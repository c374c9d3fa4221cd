//! Unconstrained minimizers shared by training, the Hopf and char-min
//! solvers and the pseudospectral penalty method.
//!
//! Gradient-based routines take an oracle `f(x, grad) -> Result<f64>` that
//! writes the gradient; derivative-free routines take `f(x) -> f64` and treat
//! non-finite values as `+∞`.

use crate::error::{HjbError, Result};

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Infinity norm of the gradient at `x` (NaN for derivative-free runs).
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖∇f‖∞ ≤ gtol`.
    pub gtol: f64,
    /// Stop when the relative decrease of one iteration falls below `ftol`
    /// (0 disables the test).
    pub ftol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iter: 5000,
            gtol: 1e-8,
            ftol: 0.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

struct Oracle<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> Result<f64>> Oracle<F> {
    /// Failed or non-finite evaluations read as `+∞`.
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        match (self.f)(x, g) {
            Ok(v) if v.is_finite() && g.iter().all(|d| d.is_finite()) => v,
            _ => f64::INFINITY,
        }
    }
}

/// Limited-memory BFGS with a strong-Wolfe line search.
///
/// `on_iter(k, f, x)` is called after every accepted iterate. Returns the last
/// iterate; `converged` reports whether the gradient tolerance was reached.
pub fn lbfgs<F, C>(f: F, x0: &[f64], cfg: &LbfgsConfig, mut on_iter: C) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
    C: FnMut(usize, f64, &[f64]),
{
    let n = x0.len();
    let mut oracle = Oracle { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = oracle.eval(&x, &mut g);
    if !fx.is_finite() {
        return Err(HjbError::NonFiniteValue { context: "lbfgs initial point", at: 0.0 });
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(cfg.memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(cfg.memory);
    let mut rho: Vec<f64> = Vec::with_capacity(cfg.memory);
    let mut dir = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.memory.max(1)];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if inf_norm(&g) <= cfg.gtol {
            break;
        }
        // two-loop recursion
        dir.copy_from_slice(&g);
        let k = s_hist.len();
        for i in (0..k).rev() {
            alpha_buf[i] = rho[i] * dot(&s_hist[i], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= alpha_buf[i] * y;
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / inf_norm(&g).max(1.0)
        };
        for d in dir.iter_mut() {
            *d *= gamma;
        }
        for i in 0..k {
            let beta = rho[i] * dot(&y_hist[i], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alpha_buf[i] - beta) * s;
            }
        }
        for d in dir.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // lost descent: restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            let scale = 1.0 / inf_norm(&g).max(1.0);
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi * scale;
            }
            slope = dot(&g, &dir);
        }

        let step = wolfe_search(&mut oracle, &x, fx, slope, &dir, cfg, &mut x_new, &mut g_new);
        let Some(f_new) = step else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            continue;
        };
        iterations += 1;
        let mut s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mut y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let decrease = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        on_iter(iterations, fx, &x);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == cfg.memory {
                // reuse the oldest buffers
                let mut old_s = s_hist.remove(0);
                let mut old_y = y_hist.remove(0);
                rho.remove(0);
                old_s.copy_from_slice(&s);
                old_y.copy_from_slice(&y);
                std::mem::swap(&mut s, &mut old_s);
                std::mem::swap(&mut y, &mut old_y);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho.push(1.0 / sy);
        }
        if cfg.ftol > 0.0 && decrease <= cfg.ftol * fx.abs().max(1.0) {
            break;
        }
    }
    let grad_norm = inf_norm(&g);
    Ok(Minimum {
        x,
        value: fx,
        grad_norm,
        iterations,
        evaluations: oracle.evals,
        converged: grad_norm <= cfg.gtol,
    })
}

/// Strong-Wolfe line search (bracketing then zoom with safeguarded cubic
/// interpolation). Writes the accepted point and gradient to `x_out`/`g_out`.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<F>(
    oracle: &mut Oracle<F>,
    x: &[f64],
    f0: f64,
    d0: f64,
    dir: &[f64],
    cfg: &LbfgsConfig,
    x_out: &mut [f64],
    g_out: &mut [f64],
) -> Option<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let mut phi = |a: f64, xo: &mut [f64], go: &mut [f64]| -> (f64, f64) {
        for ((xi, &x0), &d) in xo.iter_mut().zip(x).zip(dir) {
            *xi = x0 + a * d;
        }
        let v = oracle.eval(xo, go);
        (v, if v.is_finite() { dot(go, dir) } else { f64::NAN })
    };
    let mut best: Option<(f64, f64)> = None; // (alpha, value) of an Armijo point
    let mut a_prev = 0.0;
    let (mut f_prev, mut d_prev) = (f0, d0);
    let mut a = 1.0;
    let mut lo_hi: Option<(f64, f64, f64, f64, f64, f64)> = None;
    for i in 0..cfg.max_line_search {
        let (fa, da) = phi(a, x_out, g_out);
        if !fa.is_finite() {
            // shrink into the finite region
            lo_hi = Some((a_prev, f_prev, d_prev, a, f64::INFINITY, f64::NAN));
            break;
        }
        if fa > f0 + cfg.c1 * a * d0 || (i > 0 && fa >= f_prev) {
            lo_hi = Some((a_prev, f_prev, d_prev, a, fa, da));
            break;
        }
        best = Some((a, fa));
        if da.abs() <= -cfg.c2 * d0 {
            return Some(fa);
        }
        if da >= 0.0 {
            lo_hi = Some((a, fa, da, a_prev, f_prev, d_prev));
            break;
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 2.0;
    }
    if let Some((mut alo, mut flo, mut dlo, mut ahi, mut fhi, mut dhi)) = lo_hi {
        for _ in 0..cfg.max_line_search {
            let width = (ahi - alo).abs();
            let mut at = if fhi.is_finite() && dhi.is_finite() {
                cubic_min(alo, flo, dlo, ahi, fhi, dhi)
            } else {
                0.5 * (alo + ahi)
            };
            let (lo, hi) = if alo < ahi { (alo, ahi) } else { (ahi, alo) };
            if !at.is_finite() || at <= lo + 0.1 * width || at >= hi - 0.1 * width {
                at = 0.5 * (alo + ahi);
            }
            if width <= f64::EPSILON * alo.abs().max(1e-300) {
                break;
            }
            let (ft, dt) = phi(at, x_out, g_out);
            if !ft.is_finite() || ft > f0 + cfg.c1 * at * d0 || ft >= flo {
                ahi = at;
                fhi = ft;
                dhi = dt;
            } else {
                if best.map_or(true, |(_, fb)| ft < fb) {
                    best = Some((at, ft));
                }
                if dt.abs() <= -cfg.c2 * d0 {
                    return Some(ft);
                }
                if dt * (ahi - alo) >= 0.0 {
                    ahi = alo;
                    fhi = flo;
                    dhi = dlo;
                }
                alo = at;
                flo = ft;
                dlo = dt;
            }
        }
    }
    // fall back to the best sufficient-decrease point, if any
    let (ab, _) = best?;
    let (fb, _) = phi(ab, x_out, g_out);
    fb.is_finite().then_some(fb)
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, steps: 2000 }
    }
}

/// Adaptive-moment descent. Tracks and returns the best iterate seen.
pub fn adam<F, C>(mut f: F, x0: &[f64], cfg: &AdamConfig, mut on_iter: C) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
    C: FnMut(usize, f64, &[f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut best = (f64::INFINITY, x.clone(), f64::NAN);
    for k in 0..=cfg.steps {
        let fx = f(&x, &mut g)?;
        if !fx.is_finite() {
            return Err(HjbError::NonFiniteValue { context: "adam iterate", at: k as f64 });
        }
        if k > 0 {
            on_iter(k, fx, &x);
        }
        if fx < best.0 {
            best = (fx, x.clone(), inf_norm(&g));
        }
        if k == cfg.steps {
            break;
        }
        let t = (k + 1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
    Ok(Minimum {
        x: best.1,
        value: best.0,
        grad_norm: best.2,
        iterations: cfg.steps,
        evaluations: cfg.steps + 1,
        converged: true,
    })
}

const GOLD: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;

/// Derivative-free line minimization of `g(s)` starting from `g(0) = g0`
/// with trial scale `step`. Returns `(s*, g(s*))`.
pub fn line_minimize<G: FnMut(f64) -> f64>(mut g: G, g0: f64, step: f64, tol: f64) -> (f64, f64) {
    let mut eval = |s: f64| {
        let v = g(s);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    // bracket
    let (mut a, mut fa) = (0.0, g0);
    let (mut b, mut fb) = (step, eval(step));
    if fb > fa {
        // try the other direction before shrinking
        let (c, fc) = (-step, eval(-step));
        if fc < fa {
            b = c;
            fb = fc;
        } else {
            // minimum within (−step, step)
            return brent(&mut eval, -step, 0.0, step, fa, tol);
        }
    }
    let mut c = b + GOLD * (b - a);
    let mut fc = eval(c);
    let mut guard = 0;
    while fc < fb && guard < 60 {
        a = b;
        fa = fb;
        b = c;
        fb = fc;
        c = b + GOLD * (b - a);
        fc = eval(c);
        guard += 1;
    }
    let _ = fa;
    if fc < fb {
        return (c, fc);
    }
    let (lo, hi) = if a < c { (a, c) } else { (c, a) };
    brent(&mut eval, lo, b, hi, fb, tol)
}

/// Brent's method on the bracket `lo < b < hi` with `f(b) = fb`.
fn brent<G: FnMut(f64) -> f64>(f: &mut G, lo: f64, b: f64, hi: f64, fb: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut c) = (lo, hi);
    let (mut x, mut w, mut v) = (b, b, b);
    let (mut fx, mut fw, mut fv) = (fb, fb, fb);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..100 {
        let xm = 0.5 * (a + c);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (c - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (c - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || c - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { c - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                c = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                c = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowellConfig {
    pub max_iter: usize,
    /// Relative decrease per sweep below which the search stops.
    pub ftol: f64,
    pub line_tol: f64,
    /// Initial trial step of each line search.
    pub step: f64,
}

impl Default for PowellConfig {
    fn default() -> Self {
        PowellConfig { max_iter: 200, ftol: 1e-12, line_tol: 1e-8, step: 0.1 }
    }
}

/// Powell's conjugate-direction method.
pub fn powell<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], cfg: &PowellConfig) -> Minimum {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = cfg.step;
            e
        })
        .collect();
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    let mut iterations = 0;
    let mut converged = false;
    let mut trial = vec![0.0; n];
    while iterations < cfg.max_iter {
        iterations += 1;
        let f_start = fx;
        let x_start = x.clone();
        let (mut big_drop, mut big_idx) = (0.0, 0);
        for (k, d) in dirs.iter().enumerate() {
            let before = fx;
            let (s, fs) = line_minimize(
                |s| {
                    for i in 0..n {
                        trial[i] = x[i] + s * d[i];
                    }
                    eval(&trial)
                },
                fx,
                1.0,
                cfg.line_tol,
            );
            if fs < fx {
                for i in 0..n {
                    x[i] += s * d[i];
                }
                fx = fs;
            }
            if before - fx > big_drop {
                big_drop = before - fx;
                big_idx = k;
            }
        }
        if !fx.is_finite() {
            break;
        }
        if 2.0 * (f_start - fx) <= cfg.ftol * (f_start.abs() + fx.abs()) + 1e-300 {
            converged = true;
            break;
        }
        // extrapolated point and direction replacement
        let new_dir: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
        let ext: Vec<f64> = x.iter().zip(&new_dir).map(|(a, d)| a + d).collect();
        let fe = eval(&ext);
        if fe < f_start {
            let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - big_drop).powi(2)
                - big_drop * (f_start - fe).powi(2);
            if t < 0.0 {
                let (s, fs) = line_minimize(
                    |s| {
                        for i in 0..n {
                            trial[i] = x[i] + s * new_dir[i];
                        }
                        eval(&trial)
                    },
                    fx,
                    1.0,
                    cfg.line_tol,
                );
                if fs < fx {
                    for i in 0..n {
                        x[i] += s * new_dir[i];
                    }
                    fx = fs;
                }
                dirs.remove(big_idx);
                dirs.push(new_dir);
            }
        }
    }
    Minimum { x, value: fx, grad_norm: f64::NAN, iterations, evaluations: evals, converged }
}

/// Cyclic coordinate descent with a Brent line search along each axis.
pub fn coordinate_descent<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    sweeps: usize,
    step: f64,
    ftol: f64,
) -> Minimum {
    let n = x0.len();
    let mut evals = 0usize;
    let mut x = x0.to_vec();
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let mut fx = eval(&x);
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = x.clone();
    for _ in 0..sweeps {
        iterations += 1;
        let f_start = fx;
        for i in 0..n {
            trial.copy_from_slice(&x);
            let xi = x[i];
            let (s, fs) = line_minimize(
                |s| {
                    trial[i] = xi + s;
                    eval(&trial)
                },
                fx,
                step,
                1e-10,
            );
            if fs < fx {
                x[i] = xi + s;
                fx = fs;
            }
        }
        if f_start - fx <= ftol * fx.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    Minimum { x, value: fx, grad_norm: f64::NAN, iterations, evaluations: evals, converged }
}
