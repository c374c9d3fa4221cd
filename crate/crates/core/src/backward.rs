//! Data generation by backward integration of the characteristic system from
//! perturbed terminal states around a nominal optimal trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bvp::BvpSolution;
use crate::dataset::{Sample, Source};
use crate::error::{HjbError, Result};
use crate::integrate::{OdeSolution, Rk45};
use crate::marching::MarchSettings;
use crate::parallel::map_indexed;
use crate::problem::ControlProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardConfig {
    pub count: usize,
    pub radius: f64,
    pub seed: u64,
    pub rtol: f64,
    pub atol: f64,
    /// Abort when `‖(x, λ)‖` exceeds this multiple of its terminal value.
    pub growth_limit: f64,
    /// Fraction of kept samples re-solved by marching (0 disables).
    pub verify_fraction: f64,
    /// Relative disagreement above which a verified sample counts as bad.
    pub verify_tol: f64,
    /// Largest tolerated fraction of bad verifications.
    pub max_disagreement: f64,
    pub workers: usize,
}

impl Default for BackwardConfig {
    fn default() -> Self {
        BackwardConfig {
            count: 100,
            radius: 0.1,
            seed: 0,
            rtol: 1e-10,
            atol: 1e-12,
            growth_limit: 1e3,
            verify_fraction: 0.05,
            verify_tol: 1e-3,
            max_disagreement: 0.01,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardReport {
    pub requested: usize,
    pub kept: usize,
    pub discarded: usize,
    /// Reason per discarded draw, by draw index.
    pub failures: Vec<(usize, String)>,
    pub verified: usize,
    pub disagreements: usize,
}

#[derive(Debug, Clone)]
pub struct BackwardData {
    pub samples: Vec<Sample>,
    /// Kept trajectories in `y = (x, λ, w)`, ascending in time.
    pub trajectories: Vec<OdeSolution<f64>>,
    pub report: BackwardReport,
}

/// Uniform draw from the ball of radius `r` in `ℝⁿ`.
fn ball<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let scale = r * rng.gen::<f64>().powf(1.0 / n as f64) / norm;
    g.into_iter().map(|v| v * scale).collect()
}

/// Integrates the characteristic system backward from a terminal state.
pub fn backward_trajectory<P: ControlProblem + ?Sized>(
    p: &P,
    t0: f64,
    tf: f64,
    x_final: &[f64],
    cfg: &BackwardConfig,
) -> Result<OdeSolution<f64>> {
    let n = p.state_dim();
    let mut y = x_final.to_vec();
    y.extend(p.terminal_gradient(x_final));
    y.push(p.terminal_cost(x_final));
    let norm = |y: &[f64]| y[..2 * n].iter().map(|v| v * v).sum::<f64>().sqrt();
    let limit = cfg.growth_limit * norm(&y).max(1e-8);
    let rk = Rk45::new(cfg.rtol, cfg.atol);
    rk.integrate_monitored(|t, y: &[f64], dy: &mut [f64]| p.characteristic_rhs(t, y, dy), tf, t0, &y, |_, y| {
        norm(y) <= limit
    })
}

/// Perturbs the nominal terminal state `count` times and records every
/// integrator mesh point of each backward trajectory as a sample.
pub fn generate_backward<P: ControlProblem + ?Sized>(
    p: &P,
    nominal: &BvpSolution,
    cfg: &BackwardConfig,
) -> Result<BackwardData> {
    if cfg.count == 0 || !(cfg.radius >= 0.0) {
        return Err(HjbError::InvalidInput("backward generation needs count ≥ 1 and radius ≥ 0".into()));
    }
    if !nominal.report.converged {
        return Err(HjbError::InvalidInput("nominal trajectory did not converge".into()));
    }
    let n = p.state_dim();
    let (t0, tf) = (nominal.t0(), nominal.tf());
    let x_nom = &nominal.y[nominal.y.len() - 1][..n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let terminals: Vec<Vec<f64>> = (0..cfg.count)
        .map(|_| ball(&mut rng, n, cfg.radius).iter().zip(x_nom).map(|(d, x)| x + d).collect())
        .collect();
    let results = map_indexed(cfg.workers, &terminals, |_, xf| backward_trajectory(p, t0, tf, xf, cfg));
    let mut samples = Vec::new();
    let mut trajectories = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(traj) => {
                for (t, y) in traj.times.iter().zip(&traj.states) {
                    samples.push(Sample {
                        t: *t,
                        x: y[..n].to_vec(),
                        v: y[2 * n],
                        lambda: y[n..2 * n].to_vec(),
                        src: Source::Backward,
                    });
                }
                trajectories.push(traj);
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let report = BackwardReport {
        requested: cfg.count,
        kept: trajectories.len(),
        discarded: failures.len(),
        failures,
        verified: 0,
        disagreements: 0,
    };
    Ok(BackwardData { samples, trajectories, report })
}

/// Re-solves a seeded fraction of the samples by marching and rejects the
/// dataset when too many disagree.
pub fn verify_backward<P: ControlProblem + ?Sized>(
    p: &P,
    data: &mut BackwardData,
    settings: &MarchSettings,
    cfg: &BackwardConfig,
) -> Result<()> {
    if cfg.verify_fraction <= 0.0 || data.samples.is_empty() {
        return Ok(());
    }
    let tf = p.final_time();
    let pool: Vec<usize> = (0..data.samples.len()).filter(|&i| data.samples[i].t < tf).collect();
    if pool.is_empty() {
        return Ok(());
    }
    let k = ((pool.len() as f64 * cfg.verify_fraction).ceil() as usize).clamp(1, pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let chosen: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
    let checks = map_indexed(cfg.workers, &chosen, |_, &i| {
        let s = &data.samples[i];
        match settings.solve(p, s.t, &s.x) {
            Ok(sol) => (sol.value() - s.v).abs() > cfg.verify_tol * sol.value().abs().max(1e-12),
            Err(_) => true,
        }
    });
    let bad = checks.iter().filter(|b| **b).count();
    data.report.verified = k;
    data.report.disagreements = bad;
    if bad as f64 > cfg.max_disagreement * k as f64 {
        return Err(HjbError::DatasetRejected { checked: k, disagreements: bad });
    }
    Ok(())
}
