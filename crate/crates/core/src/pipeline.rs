//! Seed generation, neural warm starts, adaptive data expansion, validation
//! and closed-loop simulation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvp::{solve_tpbvp, BvpOptions, BvpSolution, Guess};
use crate::dataset::{Sample, Source};
use crate::error::{HjbError, Result};
use crate::integrate::Rk45;
use crate::marching::MarchSettings;
use crate::net::{train, MlpModel, Normalization, TrainConfig};
use crate::parallel::map_indexed;
use crate::problem::ControlProblem;

/// Anything that supplies `V(t, x)` and `V_x(t, x)`.
pub trait ValueModel: Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64>;
}

impl ValueModel for MlpModel<f64> {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.forward(t, x)
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.input_gradient(t, x).1
    }
}

/// `V ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroModel;

impl ValueModel for ZeroModel {
    fn value(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

/// `V = ½‖x‖²`, the exact value of the scalar LQR test problem.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfSquaredNorm;

impl ValueModel for HalfSquaredNorm {
    fn value(&self, _t: f64, x: &[f64]) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
    fn gradient(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// How converged trajectories become samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Recording {
    /// Keep every `decimation`-th mesh node after the initial point.
    pub decimation: usize,
    /// Optional cap on interior samples per trajectory, thinned uniformly in time.
    pub max_interior: Option<usize>,
}

impl Default for Recording {
    fn default() -> Self {
        Recording { decimation: 4, max_interior: None }
    }
}

impl Recording {
    pub fn samples(&self, sol: &BvpSolution, src: Source) -> Vec<Sample> {
        let n = sol.state_dim;
        let at = |k: usize| Sample {
            t: sol.mesh[k],
            x: sol.y[k][..n].to_vec(),
            v: sol.y[k][2 * n],
            lambda: sol.y[k][n..2 * n].to_vec(),
            src,
        };
        let mut out = vec![at(0)];
        let step = self.decimation.max(1);
        let mut interior: Vec<usize> = (step..sol.mesh.len()).step_by(step).collect();
        if let Some(cap) = self.max_interior {
            if interior.len() > cap {
                // meshes cluster where the solution moves fast; thin uniformly
                // in time so late, quiet stretches keep their share
                let (t0, tf) = (sol.t0(), sol.tf());
                let mut picked: Vec<usize> = (1..=cap)
                    .map(|j| {
                        let target = t0 + (tf - t0) * j as f64 / cap as f64;
                        let k = interior.partition_point(|&k| sol.mesh[k] < target);
                        match (k.checked_sub(1), interior.get(k)) {
                            (Some(a), Some(&b)) if target - sol.mesh[interior[a]] < sol.mesh[b] - target => interior[a],
                            (_, Some(&b)) => b,
                            (Some(a), None) => interior[a],
                            (None, None) => unreachable!(),
                        }
                    })
                    .collect();
                picked.dedup();
                interior = picked;
            }
        }
        out.extend(interior.into_iter().map(at));
        out
    }
}

/// Per-point outcome of a batch of solves.
#[derive(Debug, Clone)]
pub struct PointSolve {
    pub result: Result<BvpSolution>,
    pub seconds: f64,
    pub fell_back: bool,
}

/// Counts of a generation batch. Wall times are kept out of the serialized
/// form so that reports are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub attempted: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    pub fell_back: usize,
    pub samples: usize,
    pub failures: Vec<(usize, String)>,
    #[serde(skip)]
    pub mean_solve_time: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub report: GenerationReport,
}

fn collect(solves: &[PointSolve], recording: &Recording, src: Source) -> Dataset {
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    let (mut converged, mut fell_back, mut time) = (0, 0, 0.0);
    for (i, s) in solves.iter().enumerate() {
        match &s.result {
            Ok(sol) => {
                converged += 1;
                time += s.seconds;
                if s.fell_back {
                    fell_back += 1;
                }
                samples.extend(recording.samples(sol, if s.fell_back { Source::March } else { src }));
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let attempted = solves.len();
    let report = GenerationReport {
        attempted,
        converged,
        convergence_rate: if attempted == 0 { 0.0 } else { converged as f64 / attempted as f64 },
        fell_back,
        samples: samples.len(),
        failures,
        mean_solve_time: if converged == 0 { 0.0 } else { time / converged as f64 },
    };
    Dataset { samples, report }
}

/// `count` points drawn uniformly from the problem's domain.
pub fn sample_points<P: ControlProblem + ?Sized>(p: &P, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| p.domain().sample(&mut rng)).collect()
}

/// Solves every point by marching.
pub fn solve_marching<P: ControlProblem + ?Sized>(
    p: &P,
    points: &[Vec<f64>],
    settings: &MarchSettings,
    workers: usize,
) -> Vec<PointSolve> {
    let t0 = p.initial_time();
    map_indexed(workers, points, |_, x0| {
        let start = Instant::now();
        let result = settings.solve(p, t0, x0);
        PointSolve { result, seconds: start.elapsed().as_secs_f64(), fell_back: false }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedConfig {
    pub count: usize,
    pub seed: u64,
    pub workers: usize,
    pub march: MarchSettings,
    pub recording: Recording,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { count: 64, seed: 0, workers: 1, march: MarchSettings::default(), recording: Recording::default() }
    }
}

/// Uniform initial states solved by marching; samples at `t0` and along
/// each converged trajectory.
pub fn generate_seed<P: ControlProblem + ?Sized>(p: &P, cfg: &SeedConfig) -> Result<Dataset> {
    if cfg.count == 0 {
        return Err(HjbError::InvalidInput("seed generation needs count ≥ 1".into()));
    }
    let points = sample_points(p, cfg.count, cfg.seed);
    generate_seed_at(p, &points, cfg)
}

/// As [`generate_seed`] on given initial states.
pub fn generate_seed_at<P: ControlProblem + ?Sized>(p: &P, points: &[Vec<f64>], cfg: &SeedConfig) -> Result<Dataset> {
    let solves = solve_marching(p, points, &cfg.march, cfg.workers);
    let data = collect(&solves, &cfg.recording, Source::March);
    if data.report.converged == 0 && !points.is_empty() {
        return Err(HjbError::AllSolvesFailed { attempted: points.len() });
    }
    Ok(data)
}

const GUESS_NODES: usize = 200;

/// Closed-loop rollout under `u*(t, x, V_x)`, packaged as a TPBVP guess with
/// `λ = V_x` and `w = V` along the rollout.
pub fn warmstart_guess<P: ControlProblem + ?Sized, M: ValueModel + ?Sized>(
    model: &M,
    p: &P,
    t0: f64,
    x0: &[f64],
) -> Result<Guess> {
    let (n, m) = (p.state_dim(), p.control_dim());
    let mut u = vec![0.0; m];
    let rk = Rk45 { max_steps: 20_000, ..Rk45::new(1e-6, 1e-8) };
    let sol = rk.integrate(
        |t, x: &[f64], dx: &mut [f64]| {
            let g = model.gradient(t, x);
            p.optimal_control(t, x, &g, &mut u);
            p.dynamics(t, x, &u, dx)
        },
        t0,
        p.final_time(),
        x0,
    )?;
    // the rollout's step sequence becomes the initial collocation mesh; keep
    // it to a few hundred nodes
    let stride = sol.times.len().div_ceil(GUESS_NODES).max(1);
    let mut keep: Vec<usize> = (0..sol.times.len()).step_by(stride).collect();
    if keep.last() != Some(&(sol.times.len() - 1)) {
        keep.push(sol.times.len() - 1);
    }
    let mesh: Vec<f64> = keep.iter().map(|&k| sol.times[k]).collect();
    let values = keep
        .iter()
        .map(|&k| (sol.times[k], &sol.states[k]))
        .map(|(t, x)| {
            let mut y = x.clone();
            y.extend(model.gradient(t, x));
            y.push(model.value(t, x));
            debug_assert_eq!(y.len(), 2 * n + 1);
            y
        })
        .collect();
    Ok(Guess::new(mesh, values, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmConfig {
    pub bvp: BvpOptions,
    /// Re-solve failed points by marching.
    pub fallback: bool,
    pub march: MarchSettings,
    pub workers: usize,
    pub recording: Recording,
}

impl Default for WarmConfig {
    fn default() -> Self {
        WarmConfig {
            bvp: BvpOptions::default(),
            fallback: false,
            march: MarchSettings::default(),
            workers: 1,
            recording: Recording::default(),
        }
    }
}

/// Warm-started direct solves, one per point, without marching.
pub fn solve_warm<P: ControlProblem + ?Sized, M: ValueModel + ?Sized>(
    model: &M,
    p: &P,
    points: &[Vec<f64>],
    cfg: &WarmConfig,
) -> Vec<PointSolve> {
    let t0 = p.initial_time();
    map_indexed(cfg.workers, points, |_, x0| {
        let start = Instant::now();
        let result = warmstart_guess(model, p, t0, x0).and_then(|g| solve_tpbvp(p, t0, x0, &g, &cfg.bvp));
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Err(e) if cfg.fallback => {
                log::debug!("warm start failed at {x0:?} ({e}); marching");
                let start = Instant::now();
                let result = cfg.march.solve(p, t0, x0);
                PointSolve { result, seconds: start.elapsed().as_secs_f64(), fell_back: true }
            }
            result => PointSolve { result, seconds, fell_back: false },
        }
    })
}

pub fn generate_warm<P: ControlProblem + ?Sized, M: ValueModel + ?Sized>(
    model: &M,
    p: &P,
    points: &[Vec<f64>],
    cfg: &WarmConfig,
) -> Dataset {
    collect(&solve_warm(model, p, points, cfg), &cfg.recording, Source::Warm)
}

/// `fraction·n` of the steepest points (by `‖V_x(t0, ·)‖`) from a uniform
/// pool of `multiplier·n`, topped up with uniform picks from the rest.
pub fn adaptive_select<P: ControlProblem + ?Sized, M: ValueModel + ?Sized>(
    model: &M,
    p: &P,
    n: usize,
    multiplier: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if multiplier == 0 || !(0.0..=1.0).contains(&fraction) {
        return Err(HjbError::InvalidInput("pool multiplier must be ≥ 1 and fraction in [0, 1]".into()));
    }
    let pool = sample_points(p, n * multiplier, seed);
    let t0 = p.initial_time();
    let steep = ((fraction * n as f64).round() as usize).min(n);
    let mut ranked: Vec<(usize, f64)> = pool
        .iter()
        .enumerate()
        .map(|(i, x)| (i, model.gradient(t0, x).iter().map(|g| g * g).sum::<f64>()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked[..steep].iter().map(|r| r.0).collect();
    let mut rest: Vec<usize> = ranked[steep..].iter().map(|r| r.0).collect();
    rest.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xada9);
    rest.shuffle(&mut rng);
    chosen.extend(rest.into_iter().take(n - steep));
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

/// Ground truth at fresh points, solved once by marching.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub t0: f64,
    pub points: Vec<Vec<f64>>,
    /// `(V, λ)` per converged point; `None` where marching failed.
    pub truth: Vec<Option<(f64, Vec<f64>)>>,
    pub wall_time: f64,
}

impl ValidationSet {
    pub fn generate<P: ControlProblem + ?Sized>(
        p: &P,
        count: usize,
        seed: u64,
        settings: &MarchSettings,
        workers: usize,
    ) -> Result<Self> {
        if count == 0 {
            return Err(HjbError::InvalidInput("validation needs ≥ 1 point".into()));
        }
        let start = Instant::now();
        let points = sample_points(p, count, seed);
        let truth: Vec<_> = solve_marching(p, &points, settings, workers)
            .into_iter()
            .map(|s| s.result.ok().map(|sol| (sol.value(), sol.costate0().to_vec())))
            .collect();
        if truth.iter().all(Option::is_none) {
            return Err(HjbError::AllSolvesFailed { attempted: count });
        }
        Ok(ValidationSet { t0: p.initial_time(), points, truth, wall_time: start.elapsed().as_secs_f64() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub rel_l2_value: f64,
    pub rel_l2_costate: f64,
    pub max_abs_value: f64,
    pub convergence_rate: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

pub fn validate_on<M: ValueModel + ?Sized>(model: &M, set: &ValidationSet) -> ValidationReport {
    let start = Instant::now();
    let (mut ev, mut nv, mut el, mut nl, mut max_abs) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    let mut used = 0;
    for (x, truth) in set.points.iter().zip(&set.truth) {
        let Some((v, lambda)) = truth else { continue };
        used += 1;
        let err = model.value(set.t0, x) - v;
        ev += err * err;
        nv += v * v;
        max_abs = max_abs.max(err.abs());
        for (g, l) in model.gradient(set.t0, x).iter().zip(lambda) {
            el += (g - l) * (g - l);
            nl += l * l;
        }
    }
    let ratio = |e: f64, n: f64| if n > 0.0 { (e / n).sqrt() } else { e.sqrt() };
    ValidationReport {
        samples: used,
        rel_l2_value: ratio(ev, nv),
        rel_l2_costate: ratio(el, nl),
        max_abs_value: max_abs,
        convergence_rate: used as f64 / set.points.len() as f64,
        wall_time: set.wall_time + start.elapsed().as_secs_f64(),
    }
}

/// Fresh uniform points, march ground truth, errors of the model.
pub fn validate<P: ControlProblem + ?Sized, M: ValueModel + ?Sized>(
    model: &M,
    p: &P,
    count: usize,
    seed: u64,
    settings: &MarchSettings,
    workers: usize,
) -> Result<ValidationReport> {
    Ok(validate_on(model, &ValidationSet::generate(p, count, seed, settings, workers)?))
}

/// Round sizes are cumulative trajectory counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundPlan {
    pub sizes: Vec<usize>,
    pub pool_multiplier: usize,
    pub fraction: f64,
}

impl Default for RoundPlan {
    fn default() -> Self {
        RoundPlan { sizes: vec![64, 128, 1024, 4096], pool_multiplier: 4, fraction: 0.5 }
    }
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[1] < w[0]) {
            return Err(HjbError::InvalidInput("round sizes must be nonempty, positive and nondecreasing".into()));
        }
        if self.pool_multiplier == 0 || !(0.0..=1.0).contains(&self.fraction) {
            return Err(HjbError::InvalidInput("pool multiplier must be ≥ 1 and fraction in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub plan: RoundPlan,
    /// Hidden-layer widths; input and output widths follow from the problem.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub seed: u64,
    pub validation_count: usize,
    pub workers: usize,
    pub march: MarchSettings,
    pub warm: WarmConfig,
    pub recording: Recording,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            plan: RoundPlan::default(),
            hidden: vec![64, 64, 64],
            train: TrainConfig::default(),
            seed: 0,
            validation_count: 200,
            workers: 1,
            march: MarchSettings::default(),
            warm: WarmConfig { fallback: true, ..Default::default() },
            recording: Recording::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub trajectories: usize,
    pub samples: usize,
    pub generation: GenerationReport,
    pub final_loss: f64,
    pub validation: ValidationReport,
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub model: MlpModel<f64>,
    pub data: Vec<Sample>,
    pub rounds: Vec<RoundReport>,
}

/// Network sized for the problem: `[n+1, hidden.., 1]` over `[t0, tf] × X0`.
pub fn network_for<P: ControlProblem + ?Sized>(p: &P, hidden: &[usize], seed: u64) -> Result<MlpModel<f64>> {
    let mut widths = vec![p.state_dim() + 1];
    widths.extend_from_slice(hidden);
    widths.push(1);
    let d = p.domain();
    MlpModel::new(&widths, Normalization::for_problem(p.initial_time(), p.final_time(), &d.lower, &d.upper), seed)
}

/// Seed round, then per round: select steep points with the current model,
/// solve them warm-started, and retrain on the union; each round is
/// validated on the same fresh points.
pub fn run_adaptive<P: ControlProblem + ?Sized>(p: &P, cfg: &AdaptiveConfig) -> Result<AdaptiveOutcome> {
    cfg.plan.validate()?;
    let validation =
        ValidationSet::generate(p, cfg.validation_count, cfg.seed.wrapping_add(0x7a11d), &cfg.march, cfg.workers)?;
    let seed_cfg = SeedConfig {
        count: cfg.plan.sizes[0],
        seed: cfg.seed,
        workers: cfg.workers,
        march: cfg.march.clone(),
        recording: cfg.recording,
    };
    let seed_data = generate_seed(p, &seed_cfg)?;
    let mut data = seed_data.samples;
    let mut generation = seed_data.report;
    let mut model = network_for(p, &cfg.hidden, cfg.seed)?;
    let mut rounds = Vec::new();
    let warm = WarmConfig { workers: cfg.workers, recording: cfg.recording, ..cfg.warm.clone() };
    for (r, &size) in cfg.plan.sizes.iter().enumerate() {
        if r > 0 {
            let extra = size - cfg.plan.sizes[r - 1];
            let points = adaptive_select(&model, p, extra, cfg.plan.pool_multiplier, cfg.plan.fraction, cfg.seed.wrapping_add(r as u64))?;
            let new = generate_warm(&model, p, &points, &warm);
            data.extend(new.samples);
            generation = new.report;
        }
        let train_cfg = TrainConfig { seed: cfg.train.seed.wrapping_add(r as u64), ..cfg.train.clone() };
        let (trained, history) = train(&model, &data, &train_cfg)?;
        model = trained;
        let report = validate_on(&model, &validation);
        log::info!(
            "round {}: {} trajectories, {} samples, validation rel. L² error of V {:.3e}",
            r + 1,
            size,
            data.len(),
            report.rel_l2_value
        );
        rounds.push(RoundReport {
            round: r + 1,
            trajectories: size,
            samples: data.len(),
            generation: generation.clone(),
            final_loss: history.iter().map(|h| h.loss).fold(f64::INFINITY, f64::min),
            validation: report,
        });
    }
    Ok(AdaptiveOutcome { model, data, rounds })
}

/// Which time the feedback law evaluates the model at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// `u*(t, x, V_x(t, x))`.
    #[default]
    TimeVarying,
    /// `u*(t, x, V_x(t0, x))`: the stationary law from the initial-time slice.
    Frozen,
}

impl std::str::FromStr for Feedback {
    type Err = HjbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_varying" => Ok(Feedback::TimeVarying),
            "frozen" => Ok(Feedback::Frozen),
            other => Err(HjbError::InvalidInput(format!("unknown feedback '{other}'"))),
        }
    }
}

/// Feedback trajectory under the model and its realized cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub cost: f64,
}

/// Integrates `ẋ = f(t, x, u*(t, x, V_x))` together with the running cost.
pub fn closed_loop_sim<P: ControlProblem + ?Sized, M: ValueModel + ?Sized>(
    model: &M,
    p: &P,
    t0: f64,
    x0: &[f64],
    feedback: Feedback,
) -> Result<ClosedLoop> {
    let (n, m) = (p.state_dim(), p.control_dim());
    let mut u = vec![0.0; m];
    let mut y0 = x0.to_vec();
    y0.push(0.0);
    let sol = Rk45::new(1e-10, 1e-12).integrate(
        |t, y: &[f64], dy: &mut [f64]| {
            let x = &y[..n];
            let g = match feedback {
                Feedback::TimeVarying => model.gradient(t, x),
                Feedback::Frozen => model.gradient(t0, x),
            };
            p.optimal_control(t, x, &g, &mut u);
            p.dynamics(t, x, &u, &mut dy[..n])?;
            dy[n] = p.running_cost(t, x, &u);
            Ok(())
        },
        t0,
        p.final_time(),
        &y0,
    )?;
    let last = sol.last_state();
    let cost = last[n] + p.terminal_cost(&last[..n]);
    Ok(ClosedLoop {
        times: sol.times.clone(),
        states: sol.states.iter().map(|y| y[..n].to_vec()).collect(),
        cost,
    })
}
