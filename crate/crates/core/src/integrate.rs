//! Explicit Runge–Kutta integration, forward or backward in time.
//!
//! Backward integration (`t_end < t_start`) runs the same forward kernel on
//! the reparameterized time `s = −t`; the returned solution is always stored
//! on an ascending mesh.

use crate::error::{HjbError, Result};
use crate::scalar::{cst, val, Real};

/// Discrete trajectory with derivative samples for cubic Hermite dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    /// `dx/dt` at each mesh point.
    pub derivs: Vec<Vec<T>>,
}

impl<T: Real> OdeSolution<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_state(&self) -> &[T] {
        &self.states[0]
    }

    pub fn last_state(&self) -> &[T] {
        &self.states[self.states.len() - 1]
    }

    /// Cubic Hermite interpolation; clamps outside the mesh.
    pub fn dense_eval(&self, t: T) -> Vec<T> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        if self.times[i] == t {
            return self.states[i].clone();
        }
        hermite(
            self.times[i],
            self.times[i + 1],
            &self.states[i],
            &self.states[i + 1],
            &self.derivs[i],
            &self.derivs[i + 1],
            t,
        )
    }
}

/// Cubic Hermite interpolant on `[t0, t1]` through `(y0, d0)` and `(y1, d1)`.
pub fn hermite<T: Real>(t0: T, t1: T, y0: &[T], y1: &[T], d0: &[T], d1: &[T], t: T) -> Vec<T> {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let two = cst::<T>(2.0);
    let three = cst::<T>(3.0);
    let h00 = two * s3 - three * s2 + T::one();
    let h10 = s3 - two * s2 + s;
    let h01 = three * s2 - two * s3;
    let h11 = s3 - s2;
    (0..y0.len())
        .map(|k| h00 * y0[k] + h10 * h * d0[k] + h01 * y1[k] + h11 * h * d1[k])
        .collect()
}

fn check_finite<T: Real>(x: &[T], t: T, context: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HjbError::NonFiniteValue { context, at: val(t) })
    }
}

/// Wraps `f` for integration in `s = σ t` with `σ = ±1`.
struct Directed<F> {
    f: F,
    forward: bool,
}

impl<F> Directed<F> {
    fn eval<T: Real>(&mut self, s: T, x: &[T], dx: &mut [T]) -> Result<()>
    where
        F: FnMut(T, &[T], &mut [T]) -> Result<()>,
    {
        if self.forward {
            (self.f)(s, x, dx)
        } else {
            (self.f)(-s, x, dx)?;
            for v in dx.iter_mut() {
                *v = -*v;
            }
            Ok(())
        }
    }
}

fn finish<T: Real>(mut sol: OdeSolution<T>, forward: bool) -> OdeSolution<T> {
    if !forward {
        for t in sol.times.iter_mut() {
            *t = -*t;
        }
        for d in sol.derivs.iter_mut() {
            for v in d.iter_mut() {
                *v = -*v;
            }
        }
        sol.times.reverse();
        sol.states.reverse();
        sol.derivs.reverse();
    }
    sol
}

/// Classical fourth-order Runge–Kutta with `steps` equal steps.
pub fn rk4<T, F>(f: F, t_start: T, t_end: T, x0: &[T], steps: usize) -> Result<OdeSolution<T>>
where
    T: Real,
    F: FnMut(T, &[T], &mut [T]) -> Result<()>,
{
    if steps == 0 {
        return Err(HjbError::InvalidInput("rk4 needs at least one step".into()));
    }
    let forward = t_end >= t_start;
    let mut sys = Directed { f, forward };
    let (s0, s1) = if forward { (t_start, t_end) } else { (-t_start, -t_end) };
    let n = x0.len();
    let h = (s1 - s0) / cst(steps as f64);
    let half = cst::<T>(0.5);
    let sixth = cst::<T>(1.0 / 6.0);
    let two = cst::<T>(2.0);

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut derivs = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    sys.eval(s0, &x, &mut k1)?;
    for i in 0..steps {
        let s = s0 + h * cst(i as f64);
        times.push(s);
        states.push(x.clone());
        derivs.push(k1.clone());
        for j in 0..n {
            tmp[j] = x[j] + half * h * k1[j];
        }
        sys.eval(s + half * h, &tmp, &mut k2)?;
        for j in 0..n {
            tmp[j] = x[j] + half * h * k2[j];
        }
        sys.eval(s + half * h, &tmp, &mut k3)?;
        for j in 0..n {
            tmp[j] = x[j] + h * k3[j];
        }
        sys.eval(s + h, &tmp, &mut k4)?;
        for j in 0..n {
            x[j] += sixth * h * (k1[j] + two * k2[j] + two * k3[j] + k4[j]);
        }
        let s_next = if i + 1 == steps { s1 } else { s0 + h * cst((i + 1) as f64) };
        let t_phys = if forward { s_next } else { -s_next };
        check_finite(&x, t_phys, "rk4")?;
        sys.eval(s_next, &x, &mut k1)?;
    }
    times.push(s1);
    states.push(x);
    derivs.push(k1);
    Ok(finish(OdeSolution { times, states, derivs }, forward))
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince 5(4) integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk45 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Initial step as a fraction of the integration span.
    pub initial_step: f64,
}

impl Default for Rk45 {
    fn default() -> Self {
        Rk45 {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 100_000,
            initial_step: 1e-3,
        }
    }
}

impl Rk45 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Rk45 { rtol, atol, ..Default::default() }
    }

    pub fn integrate<T, F>(&self, f: F, t_start: T, t_end: T, x0: &[T]) -> Result<OdeSolution<T>>
    where
        T: Real,
        F: FnMut(T, &[T], &mut [T]) -> Result<()>,
    {
        self.integrate_monitored(f, t_start, t_end, x0, |_, _| true)
    }

    /// As [`Rk45::integrate`], but `monitor(t, x)` is called after every
    /// accepted step and aborts the integration by returning `false`.
    pub fn integrate_monitored<T, F, M>(
        &self,
        f: F,
        t_start: T,
        t_end: T,
        x0: &[T],
        mut monitor: M,
    ) -> Result<OdeSolution<T>>
    where
        T: Real,
        F: FnMut(T, &[T], &mut [T]) -> Result<()>,
        M: FnMut(T, &[T]) -> bool,
    {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(HjbError::InvalidInput("rtol and atol must be positive".into()));
        }
        let forward = t_end >= t_start;
        let mut sys = Directed { f, forward };
        let (s0, s1) = if forward { (t_start, t_end) } else { (-t_start, -t_end) };
        let span = s1 - s0;
        let n = x0.len();
        let phys = |s: T| if forward { s } else { -s };

        let mut x = x0.to_vec();
        check_finite(&x, t_start, "rk45")?;
        let mut k: Vec<Vec<T>> = vec![vec![T::zero(); n]; 7];
        sys.eval(s0, &x, &mut k[0])?;
        let mut sol = OdeSolution {
            times: vec![s0],
            states: vec![x.clone()],
            derivs: vec![k[0].clone()],
        };
        if span == T::zero() {
            return Ok(finish(sol, forward));
        }

        let min_step = cst::<T>(1e-14) * span;
        let rtol = cst::<T>(self.rtol);
        let atol = cst::<T>(self.atol);
        let mut h = cst::<T>(self.initial_step) * span;
        let mut s = s0;
        let mut xs = vec![T::zero(); n];
        let mut xn = vec![T::zero(); n];
        let mut steps = 0usize;

        while s < s1 {
            if steps >= self.max_steps {
                return Err(HjbError::TooManySteps { steps, t: val(phys(s)) });
            }
            if h < min_step {
                return Err(HjbError::StepUnderflow { t: val(phys(s)), h: val(h) });
            }
            let last = s + h >= s1;
            if last {
                h = s1 - s;
            }
            let mut stage_ok = true;
            for st in 1..7 {
                for j in 0..n {
                    let mut acc = T::zero();
                    for (q, kq) in k.iter().enumerate().take(st) {
                        let a = A[st][q];
                        if a != 0.0 {
                            acc += cst::<T>(a) * kq[j];
                        }
                    }
                    xs[j] = x[j] + h * acc;
                }
                if let Err(e) = sys.eval(s + cst::<T>(C[st]) * h, &xs, &mut k[st]) {
                    match e {
                        HjbError::NonFiniteValue { .. } => {
                            stage_ok = false;
                            break;
                        }
                        other => return Err(other),
                    }
                }
            }
            // stage 7 state is the fifth-order solution (FSAL)
            let mut err = T::zero();
            if stage_ok {
                xn.copy_from_slice(&xs);
                for j in 0..n {
                    let mut e = T::zero();
                    for (q, kq) in k.iter().enumerate() {
                        if E[q] != 0.0 {
                            e += cst::<T>(E[q]) * kq[j];
                        }
                    }
                    let scale = atol + rtol * x[j].abs().max(xn[j].abs());
                    err = err.max((h * e).abs() / scale);
                }
            }
            if !stage_ok || !err.is_finite() {
                h = h * cst(0.2);
                continue;
            }
            if err <= T::one() {
                s = if last { s1 } else { s + h };
                x.copy_from_slice(&xn);
                let k7 = k[6].clone();
                k[0].copy_from_slice(&k7);
                steps += 1;
                sol.times.push(s);
                sol.states.push(x.clone());
                sol.derivs.push(k[0].clone());
                if !monitor(phys(s), &x) {
                    return Err(HjbError::Aborted { t: val(phys(s)) });
                }
                let fac = if err == T::zero() {
                    cst(5.0)
                } else {
                    (cst::<T>(0.9) * err.powf(cst(-0.2))).min(cst(5.0)).max(cst(0.2))
                };
                h = h * fac;
            } else {
                let fac = (cst::<T>(0.9) * err.powf(cst(-0.2))).max(cst(0.2)).min(T::one());
                h = h * fac;
            }
        }
        Ok(finish(sol, forward))
    }
}

/// Convenience wrapper around [`Rk45`].
pub fn rk45_adaptive<T, F>(
    f: F,
    t_start: T,
    t_end: T,
    x0: &[T],
    rtol: f64,
    atol: f64,
) -> Result<OdeSolution<T>>
where
    T: Real,
    F: FnMut(T, &[T], &mut [T]) -> Result<()>,
{
    Rk45::new(rtol, atol).integrate(f, t_start, t_end, x0)
}
