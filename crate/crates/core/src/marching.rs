//! Time-marching continuation: solve on a short horizon, then repeatedly
//! lengthen it, seeding each solve with an extension of the previous one.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bvp::{solve_tpbvp_to, BvpOptions, BvpSolution, Guess};
use crate::error::{HjbError, Result};
use crate::problem::ControlProblem;

/// How a solution on `[t0, t_k]` becomes a guess on `[t0, t_next]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    /// Hold the final values constant beyond `t_k`.
    #[default]
    Piecewise,
    /// Replay the solution on the stretched interval.
    Linear,
}

impl FromStr for Extension {
    type Err = HjbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piecewise" => Ok(Extension::Piecewise),
            "linear" => Ok(Extension::Linear),
            other => Err(HjbError::InvalidInput(format!("unknown extension '{other}'"))),
        }
    }
}

/// Horizon sequence: either explicit times or a geometric policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarchSchedule {
    /// Explicit ascending horizons ending at `tf`; overrides the policy.
    pub times: Option<Vec<f64>>,
    /// First span as a fraction of `tf − t0`.
    pub initial_frac: f64,
    /// Growth factor of the span `t_k − t0`.
    pub factor: f64,
    /// Maximum number of increment halvings after a failed step.
    pub max_retries: usize,
}

impl Default for MarchSchedule {
    fn default() -> Self {
        MarchSchedule { times: None, initial_frac: 0.05, factor: 2.0, max_retries: 6 }
    }
}

impl MarchSchedule {
    pub fn explicit(times: Vec<f64>) -> Self {
        MarchSchedule { times: Some(times), ..Default::default() }
    }

    /// Planned horizons for the interval `[t0, tf]`.
    pub fn horizons(&self, t0: f64, tf: f64) -> Result<Vec<f64>> {
        let times = match &self.times {
            Some(t) => t.clone(),
            None => {
                if !(self.initial_frac > 0.0 && self.initial_frac <= 1.0 && self.factor > 1.0) {
                    return Err(HjbError::InvalidInput(
                        "march schedule needs 0 < initial_frac ≤ 1 and factor > 1".into(),
                    ));
                }
                let mut out = Vec::new();
                let mut span = self.initial_frac * (tf - t0);
                while t0 + span < tf * (1.0 - 1e-12) {
                    out.push(t0 + span);
                    span *= self.factor;
                }
                out.push(tf);
                out
            }
        };
        let valid = !times.is_empty()
            && times[0] > t0
            && times.windows(2).all(|w| w[0] < w[1])
            && (times[times.len() - 1] - tf).abs() <= 1e-12 * tf.abs().max(1.0);
        if valid {
            Ok(times)
        } else {
            Err(HjbError::InvalidInput("march times must increase from above t0 to tf".into()))
        }
    }
}

/// Guess on `[t0, t_next]` equal to `sol` on `[t0, t_k]` and frozen at
/// `sol(t_k)` afterwards.
pub fn extend_piecewise(sol: &Guess, t_next: f64) -> Guess {
    let mut g = sol.clone();
    g.horizon = t_next;
    g
}

/// Guess on `[t0, t_next]` replaying `sol` at `t0 + (t_k − t0)/(t_next − t0)·(t − t0)`.
pub fn extend_linear(sol: &Guess, t_next: f64) -> Guess {
    let mut g = sol.clone();
    let t0 = sol.start();
    g.time_scale = sol.time_scale * (sol.end() - t0) / (t_next - t0);
    g.horizon = t_next;
    g
}

fn extend(kind: Extension, sol: &Guess, t_next: f64) -> Guess {
    match kind {
        Extension::Piecewise => extend_piecewise(sol, t_next),
        Extension::Linear => extend_linear(sol, t_next),
    }
}

/// Everything needed to run a march from an arbitrary point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarchSettings {
    pub schedule: MarchSchedule,
    pub extension: Extension,
    pub bvp: BvpOptions,
}

impl MarchSettings {
    pub fn solve<P: ControlProblem + ?Sized>(&self, p: &P, t0: f64, x0: &[f64]) -> Result<BvpSolution> {
        march(p, t0, x0, &self.schedule, self.extension, &self.bvp)
    }
}

/// Outcome of a march, including the attempted horizons for auditing.
#[derive(Debug, Clone)]
pub struct MarchResult {
    pub solution: BvpSolution,
    pub attempted: Vec<f64>,
    pub retries: usize,
}

/// Continuation in the horizon from `(t0, x0)` up to the problem's `tf`.
pub fn march<P: ControlProblem + ?Sized>(
    p: &P,
    t0: f64,
    x0: &[f64],
    schedule: &MarchSchedule,
    extension: Extension,
    opts: &BvpOptions,
) -> Result<BvpSolution> {
    march_detailed(p, t0, x0, schedule, extension, opts).map(|r| r.solution)
}

pub fn march_detailed<P: ControlProblem + ?Sized>(
    p: &P,
    t0: f64,
    x0: &[f64],
    schedule: &MarchSchedule,
    extension: Extension,
    opts: &BvpOptions,
) -> Result<MarchResult> {
    let tf = p.final_time();
    let plan = schedule.horizons(t0, tf)?;
    let mut attempted = Vec::new();
    let mut retries = 0;
    let mut current: Option<(f64, BvpSolution)> = None;
    let mut next_idx = 0;
    let mut target = plan[0];
    let mut halvings = 0;
    let mut newton_total = 0;
    loop {
        let guess = match &current {
            None => {
                let mut g = Guess::trivial(p, t0, x0);
                g.mesh[1] = target;
                g.horizon = target;
                g
            }
            Some((_, sol)) => extend(extension, &Guess::from(sol), target),
        };
        attempted.push(target);
        match solve_tpbvp_to(p, t0, target, x0, &guess, opts) {
            Ok(sol) => {
                let mut sol = sol;
                newton_total += sol.report.newton_iterations;
                sol.report.newton_iterations = newton_total;
                if target >= tf {
                    return Ok(MarchResult { solution: sol, attempted, retries });
                }
                current = Some((target, sol));
                halvings = 0;
                while next_idx < plan.len() && plan[next_idx] <= target {
                    next_idx += 1;
                }
                target = plan[next_idx.min(plan.len() - 1)];
            }
            Err(err) => {
                let reached = current.as_ref().map_or(t0, |(t, _)| *t);
                if halvings >= schedule.max_retries {
                    log::debug!("march from {x0:?} stopped at t = {reached}: {err}");
                    return Err(HjbError::ContinuationFailed { reached });
                }
                halvings += 1;
                retries += 1;
                target = reached + 0.5 * (target - reached);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvp::solve_tpbvp;
    use crate::problem::Lqr;

    fn ramp() -> Guess {
        // y(t) = t on [0, 1]
        Guess::new(vec![0.0, 0.5, 1.0], vec![vec![0.0], vec![0.5], vec![1.0]], Some(vec![vec![1.0]; 3]))
    }

    #[test]
    fn piecewise_freezes_end_value() {
        let g = Guess::new(vec![0.0, 1.0], vec![vec![0.0, 1.0, 5.0], vec![2.0, 3.0, 4.0]], None);
        let e = extend_piecewise(&g, 1.5);
        assert_eq!(e.eval(1.5), vec![2.0, 3.0, 4.0]);
        assert_eq!(e.eval(1.2), vec![2.0, 3.0, 4.0]);
        for t in [0.0, 0.25, 0.7, 1.0] {
            assert_eq!(e.eval(t), g.eval(t));
        }
        assert_eq!(e.end(), 1.5);
    }

    #[test]
    fn linear_stretches_time() {
        let e = extend_linear(&ramp(), 2.0);
        for t in [0.0, 0.3, 1.0, 1.7, 2.0] {
            assert!((e.eval(t)[0] - t / 2.0).abs() < 1e-15);
        }
        let c = Guess::constant(0.0, 1.0, vec![3.0]);
        assert_eq!(extend_linear(&c, 4.0).eval(3.3), vec![3.0]);
    }

    #[test]
    fn geometric_horizons() {
        let h = MarchSchedule::default().horizons(0.0, 20.0).unwrap();
        assert_eq!(h, vec![1.0, 2.0, 4.0, 8.0, 16.0, 20.0]);
        assert!(MarchSchedule::explicit(vec![2.0, 1.0]).horizons(0.0, 2.0).is_err());
    }

    #[test]
    fn single_step_schedule_matches_direct_solve() {
        let p = Lqr::new(1.0);
        let opts = BvpOptions::default();
        let marched = march(&p, 0.0, &[1.0], &MarchSchedule::explicit(vec![1.0]), Extension::Piecewise, &opts).unwrap();
        let direct = solve_tpbvp(&p, 0.0, &[1.0], &Guess::trivial(&p, 0.0, &[1.0]), &opts).unwrap();
        assert_eq!(marched.y, direct.y);
        assert_eq!(marched.mesh, direct.mesh);
    }

    #[test]
    fn lqr_long_horizon_both_extensions() {
        let p = Lqr::new(8.0);
        for ext in [Extension::Piecewise, Extension::Linear] {
            let sol = march(&p, 0.0, &[0.8], &MarchSchedule::default(), ext, &BvpOptions::default()).unwrap();
            assert!((sol.value() - 0.32).abs() < 1e-6);
        }
    }
}
