mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hjb_core::backward::{generate_backward, verify_backward, BackwardConfig};
use hjb_core::dataset::{read_jsonl, write_jsonl, Sample};
use hjb_core::hj::{char_min_value, hopf_solve, HopfProblem};
use hjb_core::net::{history_csv, train};
use hjb_core::parallel::resolve_workers;
use hjb_core::pipeline::{
    closed_loop_sim, generate_seed, generate_warm, network_for, run_adaptive, sample_points, validate, AdaptiveConfig, Feedback,
    SeedConfig, WarmConfig,
};
use hjb_core::problem::{ControlProblem, Problem};
use hjb_core::spectral::{lgl_grid, solve_ps};
use hjb_core::{HjbError, ValueNet};

use config::RunConfig;

/// Causality-free value-function generation and learning for optimal control.
#[derive(Parser, Debug)]
#[command(name = "hjb", version)]
struct Cli {
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    problem: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Point-level worker threads (default: HJB_WORKERS, else 1).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Write a JSON report to this path.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[arg(long, global = true)]
    march_initial_frac: Option<f64>,
    #[arg(long, global = true)]
    march_factor: Option<f64>,
    #[arg(long, global = true)]
    march_retries: Option<usize>,
    #[arg(long, global = true, value_parser = ["piecewise", "linear"])]
    extension: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List registered problems.
    Problems {
        #[command(subcommand)]
        action: ProblemsAction,
    },
    /// Generate a dataset.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Fit a network to one or more datasets.
    Train(TrainArgs),
    /// Run the adaptive sampling loop.
    Adapt(AdaptArgs),
    /// Compare a model with marching ground truth at fresh points.
    Validate(ValidateArgs),
    /// Value and costate at one point.
    SolvePoint(SolvePointArgs),
    /// Closed-loop rollout under a model's feedback.
    Simulate(SimulateArgs),
    /// LGL nodes, weights and differentiation matrix as CSV.
    Lgl {
        #[arg(long)]
        order: usize,
    },
}

#[derive(Subcommand, Debug)]
enum ProblemsAction {
    List,
}

#[derive(Subcommand, Debug)]
enum GenerateKind {
    Seed {
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Warm {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Re-solve failures by marching.
        #[arg(long)]
        fallback: bool,
    },
    Backward {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        /// Initial state of the nominal trajectory (default: a seeded draw).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from an existing model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Loss history as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    out: PathBuf,
    /// Cumulative trajectory counts per round, e.g. 64,128,1024.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Write the final training set here.
    #[arg(long)]
    data_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Method {
    Tpbvp,
    Charmin,
    Hopf,
    Ps,
}

#[derive(Args, Debug)]
struct SolvePointArgs {
    #[arg(long, value_enum, default_value = "tpbvp")]
    method: Method,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    t0: f64,
    /// Hopf problems are posed forward in time: evaluate at time `t`.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x0: Vec<f64>,
    /// Evaluate the model at the current time or at the initial time.
    #[arg(long, default_value = "time_varying", value_parser = parse_feedback)]
    feedback: Feedback,
    /// Trajectory as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_feedback(s: &str) -> Result<Feedback, String> {
    s.parse().map_err(|e: HjbError| e.to_string())
}

type CliResult<T> = Result<T, HjbError>;

fn exit_code(e: &HjbError) -> u8 {
    match e {
        HjbError::InvalidInput(_) | HjbError::Parse(_) | HjbError::Io(_) => 2,
        _ => 1,
    }
}

fn build_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load(path)?;
    }
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            pairs.push((k.to_string(), v));
        }
    };
    push("problem", cli.problem.clone());
    push("seed", cli.seed.map(|v| v.to_string()));
    push("march_initial_frac", cli.march_initial_frac.map(|v| v.to_string()));
    push("march_factor", cli.march_factor.map(|v| v.to_string()));
    push("march_retries", cli.march_retries.map(|v| v.to_string()));
    push("extension", cli.extension.clone());
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| HjbError::InvalidInput(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        pairs.push((k.trim().to_string(), v.to_string()));
    }
    for (k, v) in pairs {
        cfg.set(&k, &v)?;
    }
    cfg.workers = Some(resolve_workers(cli.workers.or(cfg.workers))?);
    Ok(cfg)
}

fn write_report(path: Option<&Path>, report: &serde_json::Value) -> CliResult<()> {
    if let Some(path) = path {
        std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    }
    Ok(())
}

fn check_dim(p: &Problem, x0: &[f64]) -> CliResult<()> {
    if x0.len() != p.state_dim() {
        return Err(HjbError::InvalidInput(format!(
            "--x0 has {} entries; problem '{}' has state dimension {}",
            x0.len(),
            p.name(),
            p.state_dim()
        )));
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = build_config(cli)?;
    let workers = cfg.workers.unwrap_or(1);
    let report = cli.report.as_deref();
    match &cli.command {
        Command::Problems { action: ProblemsAction::List } => {
            for name in Problem::NAMES {
                let p = Problem::by_name(name)?;
                println!("{name}\tn={} m={} t=[{}, {}]", p.state_dim(), p.control_dim(), p.initial_time(), p.final_time());
            }
            println!("quadratic\t(Hopf, any dimension)");
        }
        Command::Lgl { order } => print!("{}", lgl_grid(*order)?.to_csv()),
        Command::Generate { kind } => {
            let p = cfg.problem()?;
            match kind {
                GenerateKind::Seed { count, out } => {
                    let scfg = SeedConfig {
                        count: *count,
                        seed: cfg.seed,
                        workers,
                        march: cfg.march.clone(),
                        recording: cfg.recording,
                    };
                    let data = generate_seed(&p, &scfg)?;
                    write_jsonl(out, &data.samples)?;
                    println!(
                        "{} samples from {}/{} converged trajectories (rate {:.3}, mean solve {:.3}s)",
                        data.samples.len(),
                        data.report.converged,
                        data.report.attempted,
                        data.report.convergence_rate,
                        data.report.mean_solve_time
                    );
                    write_report(report, &serde_json::to_value(&data.report)?)?;
                }
                GenerateKind::Warm { model, count, out, fallback } => {
                    let net = ValueNet::load(model)?;
                    let points = sample_points(&p, *count, cfg.seed);
                    let wcfg = WarmConfig {
                        fallback: *fallback,
                        march: cfg.march.clone(),
                        bvp: cfg.march.bvp,
                        workers,
                        recording: cfg.recording,
                    };
                    let data = generate_warm(&net, &p, &points, &wcfg);
                    write_jsonl(out, &data.samples)?;
                    println!(
                        "{} samples; warm-start rate {:.3} ({} fell back), mean solve {:.3}s",
                        data.samples.len(),
                        data.report.convergence_rate,
                        data.report.fell_back,
                        data.report.mean_solve_time
                    );
                    write_report(report, &serde_json::to_value(&data.report)?)?;
                    if data.report.converged == 0 && *count > 0 {
                        return Err(HjbError::AllSolvesFailed { attempted: *count });
                    }
                }
                GenerateKind::Backward { count, radius, x0, out } => {
                    let x0 = match x0 {
                        Some(x) => x.clone(),
                        None => sample_points(&p, 1, cfg.seed).remove(0),
                    };
                    check_dim(&p, &x0)?;
                    let nominal = cfg.march.solve(&p, p.initial_time(), &x0)?;
                    let bcfg = BackwardConfig { count: *count, radius: *radius, seed: cfg.seed, workers, ..Default::default() };
                    let mut data = generate_backward(&p, &nominal, &bcfg)?;
                    verify_backward(&p, &mut data, &cfg.march, &bcfg)?;
                    write_jsonl(out, &data.samples)?;
                    println!(
                        "{} samples from {}/{} backward trajectories ({} verified, {} disagreements)",
                        data.samples.len(),
                        data.report.kept,
                        data.report.requested,
                        data.report.verified,
                        data.report.disagreements
                    );
                    write_report(report, &serde_json::to_value(&data.report)?)?;
                }
            }
        }
        Command::Train(args) => {
            let p = cfg.problem()?;
            let mut data: Vec<Sample> = Vec::new();
            for path in &args.data {
                data.extend(read_jsonl(path)?);
            }
            let model = match &args.init {
                Some(path) => ValueNet::load(path)?,
                None => network_for(&p, &cfg.hidden, cfg.seed)?,
            };
            let train_cfg = hjb_core::net::TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
            let (model, history) = train(&model, &data, &train_cfg)?;
            model.save(&args.out)?;
            if let Some(path) = &args.history {
                std::fs::write(path, history_csv(&history))?;
            }
            let last = history.last().map_or(f64::NAN, |h| h.loss);
            println!("trained on {} samples; final loss {last:.6e}", data.len());
            write_report(report, &json!({ "samples": data.len(), "iterations": history.len() - 1, "final_loss": last }))?;
        }
        Command::Adapt(args) => {
            let p = cfg.problem()?;
            let mut plan = cfg.plan.clone();
            if let Some(sizes) = &args.sizes {
                plan.sizes = sizes.clone();
            }
            let acfg = AdaptiveConfig {
                plan,
                hidden: cfg.hidden.clone(),
                train: cfg.train.clone(),
                seed: cfg.seed,
                validation_count: cfg.validation_count,
                workers,
                march: cfg.march.clone(),
                warm: WarmConfig { fallback: cfg.fallback, bvp: cfg.march.bvp, march: cfg.march.clone(), ..Default::default() },
                recording: cfg.recording,
            };
            let out = run_adaptive(&p, &acfg)?;
            out.model.save(&args.out)?;
            if let Some(path) = &args.data_out {
                write_jsonl(path, &out.data)?;
            }
            for r in &out.rounds {
                println!(
                    "round {}: {} trajectories, {} samples, rel. L² error V {:.3e}, λ {:.3e}",
                    r.round, r.trajectories, r.samples, r.validation.rel_l2_value, r.validation.rel_l2_costate
                );
            }
            write_report(report, &serde_json::to_value(&out.rounds)?)?;
        }
        Command::Validate(args) => {
            let p = cfg.problem()?;
            let net = ValueNet::load(&args.model)?;
            let r = validate(&net, &p, args.count, cfg.seed, &cfg.march, workers)?;
            println!(
                "{} points: rel. L² error V {:.3e}, λ {:.3e}; max |ΔV| {:.3e}; ground-truth rate {:.3} ({:.1}s)",
                r.samples, r.rel_l2_value, r.rel_l2_costate, r.max_abs_value, r.convergence_rate, r.wall_time
            );
            write_report(report, &serde_json::to_value(&r)?)?;
        }
        Command::SolvePoint(args) => {
            let out = solve_point(&cfg, args)?;
            println!("{}", serde_json::to_string(&out)?);
            write_report(report, &out)?;
        }
        Command::Simulate(args) => {
            let p = cfg.problem()?;
            check_dim(&p, &args.x0)?;
            let net = ValueNet::load(&args.model)?;
            let run = closed_loop_sim(&net, &p, p.initial_time(), &args.x0, args.feedback)?;
            if let Some(path) = &args.out {
                let mut csv = String::from("t");
                for i in 0..p.state_dim() {
                    csv.push_str(&format!(",x{i}"));
                }
                csv.push('\n');
                for (t, x) in run.times.iter().zip(&run.states) {
                    csv.push_str(&t.to_string());
                    for v in x {
                        csv.push_str(&format!(",{v}"));
                    }
                    csv.push('\n');
                }
                std::fs::write(path, csv)?;
            }
            println!("realized cost {:.8}", run.cost);
            write_report(report, &json!({ "cost": run.cost, "steps": run.times.len() }))?;
        }
    }
    Ok(())
}

fn solve_point(cfg: &RunConfig, args: &SolvePointArgs) -> CliResult<serde_json::Value> {
    if let Method::Hopf = args.method {
        let problem = HopfProblem::by_name(&cfg.hopf_problem, args.x0.len())?;
        let t = args.t.unwrap_or(args.t0);
        let hcfg = hjb_core::hj::HopfConfig { seed: cfg.seed, ..cfg.hopf };
        let r = hopf_solve(&problem, t, &args.x0, &hcfg)?;
        return Ok(json!({ "method": "hopf", "t": t, "x": args.x0, "value": r.value, "minimizer": r.minimizer }));
    }
    let p = cfg.problem()?;
    check_dim(&p, &args.x0)?;
    let (t0, x0) = (args.t0, &args.x0);
    Ok(match args.method {
        Method::Tpbvp => {
            let sol = cfg.march.solve(&p, t0, x0)?;
            json!({
                "method": "tpbvp",
                "value": sol.value(),
                "costate": sol.costate0(),
                "mesh_points": sol.report.mesh_points,
                "newton_iterations": sol.report.newton_iterations,
            })
        }
        Method::Charmin => {
            let ccfg = hjb_core::hj::CharMinConfig { seed: cfg.seed, ..cfg.charmin.clone() };
            let r = char_min_value(&p, t0, x0, &ccfg)?;
            json!({ "method": "charmin", "value": r.value, "costate": r.costate, "evaluations": r.evaluations })
        }
        Method::Ps => {
            let mut pcfg = cfg.ps.clone();
            if let Some(n) = args.order {
                pcfg.order = n;
            }
            if let Some(e) = args.eps {
                pcfg.eps = e;
            }
            let sol = solve_ps(&p, t0, x0, &pcfg)?;
            json!({
                "method": "ps",
                "value": sol.value,
                "order": sol.order,
                "control0": sol.controls[0],
                "max_defect": sol.report.max_defect,
            })
        }
        Method::Hopf => unreachable!(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
