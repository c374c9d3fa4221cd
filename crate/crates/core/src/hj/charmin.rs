use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HjbError, Result};
use crate::integrate::Rk45;
use crate::optim::{coordinate_descent, powell, PowellConfig};
use crate::problem::ControlProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CharMinConfig {
    /// Initial costates tried (the first is `ψ_x(x0)` itself).
    pub starts: usize,
    /// Half-width of the start box, in units of `max(1, ‖ψ_x(x0)‖∞)`.
    pub box_half_width: f64,
    pub powell_iterations: usize,
    pub sweeps: usize,
    pub ftol: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Candidates whose `‖(x, λ)‖∞` grows past this multiple of its initial
    /// value (at least 1) are scored +∞.
    pub growth_limit: f64,
    /// Integrator step cap per candidate.
    pub max_steps: usize,
    /// Cost evaluations allowed per start; further candidates score +∞.
    pub max_evaluations: usize,
    pub seed: u64,
}

impl Default for CharMinConfig {
    fn default() -> Self {
        CharMinConfig {
            starts: 16,
            box_half_width: 5.0,
            powell_iterations: 200,
            sweeps: 50,
            ftol: 1e-14,
            rtol: 1e-10,
            atol: 1e-12,
            growth_limit: 1e3,
            max_steps: 5000,
            max_evaluations: 4000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharMinResult {
    pub value: f64,
    pub costate: Vec<f64>,
    pub evaluations: usize,
    /// Starts whose optimized cost was finite.
    pub finite_starts: usize,
}

/// Cost of the forward characteristic from `(x0, λ0)`; +∞ on integrator
/// failure or blow-up.
pub fn trajectory_cost<P: ControlProblem + ?Sized>(p: &P, t0: f64, x0: &[f64], lambda0: &[f64], cfg: &CharMinConfig) -> f64 {
    let n = p.state_dim();
    let mut y = x0.to_vec();
    y.extend_from_slice(lambda0);
    y.push(0.0);
    let limit = cfg.growth_limit * y[..2 * n].iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let rk = Rk45 { max_steps: cfg.max_steps, ..Rk45::new(cfg.rtol, cfg.atol) };
    let sol = rk.integrate_monitored(
        |t, y: &[f64], dy: &mut [f64]| p.characteristic_rhs(t, y, dy),
        t0,
        p.final_time(),
        &y,
        |_, y| y[..2 * n].iter().all(|v| v.abs() <= limit),
    );
    match sol {
        Ok(sol) => {
            let yf = sol.last_state();
            let j = p.terminal_cost(&yf[..n]) - yf[2 * n];
            if j.is_finite() { j } else { f64::INFINITY }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Value by minimizing the cost of forward characteristics over the initial
/// costate; Powell from each start, polished by coordinate descent.
pub fn char_min_value<P: ControlProblem + ?Sized>(p: &P, t0: f64, x0: &[f64], cfg: &CharMinConfig) -> Result<CharMinResult> {
    let n = p.state_dim();
    if x0.len() != n || cfg.starts == 0 {
        return Err(HjbError::InvalidInput("char-min needs x0 of the state dimension and ≥ 1 start".into()));
    }
    let grad = p.terminal_gradient(x0);
    let scale = cfg.box_half_width * grad.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pcfg = PowellConfig { max_iter: cfg.powell_iterations, ftol: cfg.ftol, ..Default::default() };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluations = 0;
    let mut finite_starts = 0;
    for k in 0..cfg.starts {
        let start: Vec<f64> = if k == 0 { grad.clone() } else { (0..n).map(|_| rng.gen_range(-scale..=scale)).collect() };
        let budget = std::cell::Cell::new(cfg.max_evaluations);
        let cost = |l: &[f64]| {
            if budget.get() == 0 {
                return f64::INFINITY;
            }
            budget.set(budget.get() - 1);
            trajectory_cost(p, t0, x0, l, cfg)
        };
        let a = powell(cost, &start, &pcfg);
        let b = coordinate_descent(cost, &a.x, cfg.sweeps, pcfg.step, cfg.ftol);
        evaluations += a.evaluations + b.evaluations;
        let m = if b.value <= a.value { b } else { a };
        log::trace!("char-min start {k}: J = {}", m.value);
        if m.value.is_finite() {
            finite_starts += 1;
            if best.as_ref().map_or(true, |(v, _)| m.value < *v) {
                best = Some((m.value, m.x));
            }
        }
    }
    let (value, costate) = best.ok_or(HjbError::AllCandidatesFailed)?;
    Ok(CharMinResult { value, costate, evaluations, finite_starts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Lqr, RigidBody, RigidBodyParams};

    #[test]
    fn lqr_analytic() {
        let p = Lqr::new(1.0);
        let r = char_min_value(&p, 0.0, &[1.0], &CharMinConfig { starts: 4, ..Default::default() }).unwrap();
        assert!((r.value - 0.5).abs() < 1e-4, "{}", r.value);
        assert!((r.costate[0] - 1.0).abs() < 1e-3, "{:?}", r.costate);
    }

    #[test]
    fn rigid_body_equilibrium() {
        let p = RigidBody::new(RigidBodyParams::default()).unwrap();
        let r = char_min_value(&p, 0.0, &[0.0; 6], &CharMinConfig { starts: 1, max_evaluations: 200, ..Default::default() }).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!(r.costate.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn candidate_cost_bounds_value() {
        // any admissible λ0 gives a trajectory whose cost is at least V
        let p = Lqr::new(1.0);
        let cfg = CharMinConfig::default();
        for l in [0.0, 0.5, 0.99, 1.5] {
            assert!(trajectory_cost(&p, 0.0, &[1.0], &[l], &cfg) >= 0.5 - 1e-10);
        }
    }
}
