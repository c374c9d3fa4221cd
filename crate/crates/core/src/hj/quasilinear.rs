use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HjbError, Result};
use crate::integrate::rk4;
use crate::linalg::{condition_number, solve_dense};
use crate::scalar::{Dual, Real};

/// `Σ aᵢ(x, u) ∂u/∂xᵢ = c(x, u)` with data `u = u0(σ)` on the surface
/// `x = X(σ)`, `σ ∈ ℝⁿ⁻¹`.
pub trait QuasilinearPde {
    fn dim(&self) -> usize;
    /// Writes `a(x, u)` and returns `c(x, u)`.
    fn coefficients<T: Real>(&self, x: &[T], u: T, a: &mut [T]) -> T;
    /// Writes `X(σ)` and returns `u0(σ)`.
    fn surface<T: Real>(&self, sigma: &[T], x: &mut [T]) -> T;
}

/// `u_t + u_x = 0`, `u(0, x) = sin x`; coordinates `(t, x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Transport;

impl QuasilinearPde for Transport {
    fn dim(&self) -> usize {
        2
    }
    fn coefficients<T: Real>(&self, _x: &[T], _u: T, a: &mut [T]) -> T {
        a[0] = T::one();
        a[1] = T::one();
        T::zero()
    }
    fn surface<T: Real>(&self, sigma: &[T], x: &mut [T]) -> T {
        x[0] = T::zero();
        x[1] = sigma[0];
        sigma[0].sin()
    }
}

/// `u_t + u u_x = 0`, `u(0, x) = −x`; characteristics cross at `t = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Burgers;

impl QuasilinearPde for Burgers {
    fn dim(&self) -> usize {
        2
    }
    fn coefficients<T: Real>(&self, _x: &[T], u: T, a: &mut [T]) -> T {
        a[0] = T::one();
        a[1] = u;
        T::zero()
    }
    fn surface<T: Real>(&self, sigma: &[T], x: &mut [T]) -> T {
        x[0] = T::zero();
        x[1] = sigma[0];
        -sigma[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasilinearConfig {
    /// rk4 steps along each characteristic.
    pub steps: usize,
    /// Random surface-parameter starts beyond `σ = 0`.
    pub starts: usize,
    /// Half-width of the start box for `σ`.
    pub box_half_width: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for QuasilinearConfig {
    fn default() -> Self {
        QuasilinearConfig { steps: 200, starts: 4, box_half_width: 2.0, seed: 0, tol: 1e-12, max_newton: 50 }
    }
}

const SHOCK_COND: f64 = 1e10;
const ROOT_SPLIT: f64 = 1e-6;

/// Characteristic from surface parameter `σ` run to arc length `s`, as an
/// rk4 flow over `τ ∈ [0, 1]` with the field scaled by `s` so that `s` is an
/// ordinary parameter. Returns the states `(x, u)` at every step.
fn shoot<T: Real, P: QuasilinearPde>(pde: &P, sigma: &[T], s: T, steps: usize) -> Result<Vec<Vec<T>>> {
    let n = pde.dim();
    let mut y = vec![T::zero(); n + 1];
    y[n] = pde.surface(sigma, &mut y[..n]);
    let mut a = vec![T::zero(); n];
    let sol = rk4(
        |_, y: &[T], dy: &mut [T]| {
            let c = pde.coefficients(&y[..n], y[n], &mut a);
            for i in 0..n {
                dy[i] = s * a[i];
            }
            dy[n] = s * c;
            Ok(())
        },
        T::zero(),
        T::one(),
        &y,
        steps,
    )?;
    Ok(sol.states)
}

struct Root {
    z: Vec<f64>,
    u: f64,
}

/// Newton on `(σ, s) ↦ x(s; σ) − target` with dual-number Jacobian columns;
/// then a sign and conditioning check on `det ∂x/∂(σ, s)` along the path.
fn newton<P: QuasilinearPde>(pde: &P, target: &[f64], z0: &[f64], cfg: &QuasilinearConfig) -> Result<Root> {
    let n = pde.dim();
    let mut z = z0.to_vec();
    for _ in 0..cfg.max_newton {
        let (states, jac) = flow_with_jacobian(pde, &z, cfg.steps)?;
        let last = &states[states.len() - 1];
        let r: Vec<f64> = (0..n).map(|i| last[i] - target[i]).collect();
        let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rnorm <= cfg.tol * (1.0 + target.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            check_path(pde, &states, &jac, n)?;
            return Ok(Root { z, u: last[n] });
        }
        let mut last_jac: Vec<f64> = jac.last().cloned().unwrap_or_default();
        let mut dz = r;
        if solve_dense(&mut last_jac, &mut dz, n).is_err() {
            break;
        }
        for i in 0..n {
            z[i] -= dz[i];
        }
        if z.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Err(HjbError::NoCharacteristicFound)
}

/// States along the characteristic and, per step, the row-major Jacobian of
/// `x` with respect to the unknowns `(σ, s)`.
fn flow_with_jacobian<P: QuasilinearPde>(pde: &P, z: &[f64], steps: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = pde.dim();
    let mut states = Vec::new();
    let mut jac: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        let zd: Vec<Dual<f64>> = z
            .iter()
            .enumerate()
            .map(|(k, &v)| if k == j { Dual::variable(v) } else { Dual::constant(v) })
            .collect();
        let path = shoot(pde, &zd[..n - 1], zd[n - 1], steps)?;
        if j == 0 {
            states = path.iter().map(|y| y.iter().map(|v| v.re).collect()).collect();
            jac = vec![vec![0.0; n * n]; path.len()];
        }
        for (k, y) in path.iter().enumerate() {
            for i in 0..n {
                jac[k][i * n + j] = y[i].eps;
            }
        }
    }
    Ok((states, jac))
}

/// Crossing characteristics show up as a sign change of
/// `det [∂x/∂σ | a(x, u)]` between the surface and the target, or as an
/// ill-conditioned hit map.
fn check_path<P: QuasilinearPde>(pde: &P, states: &[Vec<f64>], jac: &[Vec<f64>], n: usize) -> Result<()> {
    let final_jac = &jac[jac.len() - 1];
    let cond = condition_number(final_jac, n);
    if !(cond <= SHOCK_COND) {
        return Err(HjbError::ShockDetected(format!("hit-map condition {cond:e}")));
    }
    let mut a = vec![0.0; n];
    let mut first_sign = 0.0;
    for (k, (y, jk)) in states.iter().zip(jac).enumerate() {
        pde.coefficients(&y[..n], y[n], &mut a);
        let mut m = jk.clone();
        for i in 0..n {
            m[i * n + n - 1] = a[i];
        }
        let d = determinant(&m, n);
        if k == 0 {
            first_sign = d.signum();
        } else if d.signum() != first_sign || d == 0.0 {
            let tau = k as f64 / (states.len() - 1) as f64;
            return Err(HjbError::ShockDetected(format!("characteristics cross at τ = {tau:.3}")));
        }
    }
    Ok(())
}

fn determinant(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap_or(c);
        if a[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            det = -det;
        }
        det *= a[c * n + c];
        for r in c + 1..n {
            let f = a[r * n + c] / a[c * n + c];
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
        }
    }
    det
}

/// `u(target)` by shooting characteristics from the initial surface.
pub fn quasilinear_eval<P: QuasilinearPde>(pde: &P, target: &[f64], cfg: &QuasilinearConfig) -> Result<f64> {
    let n = pde.dim();
    if target.len() != n || n < 1 {
        return Err(HjbError::InvalidInput("target must have the PDE dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for k in 0..=cfg.starts {
        let sigma: Vec<f64> =
            if k == 0 { vec![0.0; n - 1] } else { (0..n - 1).map(|_| rng.gen_range(-cfg.box_half_width..cfg.box_half_width)).collect() };
        for s in [0.5, 1.0] {
            let mut z = sigma.clone();
            z.push(s);
            starts.push(z);
        }
    }
    let mut roots: Vec<Root> = Vec::new();
    let mut shock: Option<HjbError> = None;
    for z0 in &starts {
        match newton(pde, target, z0, cfg) {
            Ok(r) => roots.push(r),
            Err(e @ HjbError::ShockDetected(_)) => shock = Some(e),
            Err(_) => {}
        }
    }
    if let Some(e) = shock {
        return Err(e);
    }
    let first = roots.first().ok_or(HjbError::NoCharacteristicFound)?;
    if let Some(other) = roots.iter().find(|r| (r.u - first.u).abs() > ROOT_SPLIT) {
        return Err(HjbError::ShockDetected(format!(
            "characteristics from σ = {:?} and σ = {:?} carry u = {} and {}",
            &first.z[..n - 1],
            &other.z[..n - 1],
            first.u,
            other.u
        )));
    }
    log::debug!("quasilinear root at σ = {:?}, s = {}", &first.z[..n - 1], first.z[n - 1]);
    Ok(first.u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_shifts_data() {
        let u = quasilinear_eval(&Transport, &[0.5, 1.0], &QuasilinearConfig::default()).unwrap();
        assert!((u - 0.5f64.sin()).abs() < 1e-10, "{u}");
    }

    #[test]
    fn burgers_before_crossing() {
        for (t, x) in [(0.5, 0.25), (0.3, -0.7), (0.9, 0.05)] {
            let u = quasilinear_eval(&Burgers, &[t, x], &QuasilinearConfig::default()).unwrap();
            assert!((u + x / (1.0 - t)).abs() < 1e-8, "{u} at ({t}, {x})");
        }
    }

    #[test]
    fn burgers_after_crossing_is_a_shock() {
        match quasilinear_eval(&Burgers, &[1.5, 0.5], &QuasilinearConfig::default()) {
            Err(HjbError::ShockDetected(_)) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn determinant_matches_2x2() {
        assert!((determinant(&[1.0, 2.0, 3.0, 4.0], 2) + 2.0).abs() < 1e-15);
    }
}
