use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctmdp::experiment::{ModelSource, REGRET_TOL, TOOL_VERSION};
use ctmdp::lower_bound::DEFAULT_GRID_RESOLUTION;
use ctmdp::sim::{write_regret_csv, RNG_NAME};
use ctmdp::{
    compute_c, compute_gaps, diameter, run_experiment, simulate, solve_average_reward, validate_model, write_outputs,
    AgentSpec, DeltaPolicy, Error, ExperimentConfig, Horizon, Model, SimulationConfig,
};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ctmdp", version, about = "Continuous-time MDP planning, learning and regret experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against the modelling assumptions.
    Validate(ModelArgs),
    /// Optimal gain, bias and policy.
    Solve(SolveArgs),
    /// Suboptimality gaps, optimal action sets and the policy gain gap.
    Gaps(SolveArgs),
    /// Worst-case minimal expected travel time between states.
    Diameter(SolveArgs),
    /// K, C(M) and the closed-form bounds.
    LowerBound(LowerBoundArgs),
    /// Run a stationary policy and log its trajectory.
    Simulate(SimulateArgs),
    /// Run a learner on one seed.
    Learn(LearnArgs),
    /// Multi-seed experiment from a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct LowerBoundArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Step of the rate grid scanned for each pair.
    #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
    grid_resolution: f64,
}

#[derive(Args, Clone, Copy)]
#[group(required = true, multiple = false)]
struct HorizonArgs {
    #[arg(long)]
    horizon_time: Option<f64>,
    #[arg(long)]
    horizon_steps: Option<u64>,
}

impl HorizonArgs {
    fn horizon(&self) -> Horizon {
        match (self.horizon_time, self.horizon_steps) {
            (Some(t), _) => Horizon::Time(t),
            (_, Some(n)) => Horizon::Steps(n),
            _ => unreachable!("clap enforces one horizon"),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    horizon: HorizonArgs,
    /// Comma-separated actions per state; the optimal policy when absent.
    #[arg(long, value_delimiter = ',')]
    policy: Option<Vec<usize>>,
    /// Output directory for trajectory.csv and regret.csv; the trajectory goes
    /// to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    horizon: HorizonArgs,
    /// A value in (0, 1) or `one-over-n`.
    #[arg(long, default_value = "one-over-n")]
    delta: String,
    /// ct-ucrl, greedy-no-optimism, uniform-random or optimal-policy.
    #[arg(long, default_value = "ct-ucrl")]
    agent: String,
    /// Output directory for trajectory.csv and regret.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed count.
    #[arg(long)]
    seeds: Option<u64>,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_numerical() { 2 } else { 1 }, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Validate(args) => cmd_validate(&args),
        Command::Solve(args) => cmd_solve(&args),
        Command::Gaps(args) => cmd_gaps(&args),
        Command::Diameter(args) => cmd_diameter(&args),
        Command::LowerBound(args) => cmd_lower_bound(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Learn(args) => cmd_learn(&args),
        Command::Experiment(args) => cmd_experiment(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn print_json(value: &Value) -> CmdResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    Model::load(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn load_valid(path: &Path) -> Result<Model, Failure> {
    let model = load_model(path)?;
    validate_model(&model).into_result()?;
    Ok(model)
}

fn check_tol(tol: f64) -> CmdResult {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")).into())
    }
}

fn cmd_validate(args: &ModelArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let report = validate_model(&model);
    let valid = report.is_valid();
    print_json(&json!({
        "tool_version": TOOL_VERSION,
        "model": args.model,
        "valid": valid,
        "report": report,
    }))?;
    if valid {
        Ok(())
    } else {
        Err(Failure { code: 1, message: String::new() })
    }
}

fn cmd_solve(args: &SolveArgs) -> CmdResult {
    check_tol(args.tol)?;
    let model = load_valid(&args.model)?;
    let sol = solve_average_reward(&model, args.tol)?;
    print_json(&json!({
        "tool_version": TOOL_VERSION,
        "model": args.model,
        "tol": args.tol,
        "rho_star": sol.gain,
        "h_star": sol.bias,
        "policy": sol.greedy_policy,
        "residual": sol.residual,
        "sweeps": sol.sweeps,
    }))
}

fn cmd_gaps(args: &SolveArgs) -> CmdResult {
    check_tol(args.tol)?;
    let model = load_valid(&args.model)?;
    let sol = solve_average_reward(&model, args.tol)?;
    let gaps = compute_gaps(&model, &sol)?;
    print_json(&json!({
        "tool_version": TOOL_VERSION,
        "model": args.model,
        "tol": args.tol,
        "rho_star": sol.gain,
        "phi": gaps.phi,
        "optimal_actions": gaps.optimal_actions,
        "gap_g": gaps.gap_g,
        "bias_span": gaps.bias_span,
    }))
}

fn cmd_diameter(args: &SolveArgs) -> CmdResult {
    check_tol(args.tol)?;
    let model = load_valid(&args.model)?;
    let d = diameter(&model, args.tol)?;
    print_json(&json!({
        "tool_version": TOOL_VERSION,
        "model": args.model,
        "tol": args.tol,
        "diameter": d,
    }))
}

fn cmd_lower_bound(args: &LowerBoundArgs) -> CmdResult {
    check_tol(args.tol)?;
    let model = load_valid(&args.model)?;
    let sol = solve_average_reward(&model, args.tol)?;
    let c = compute_c(&model, &sol, args.grid_resolution)?;
    let pairs: Vec<Value> = c
        .pairs
        .iter()
        .map(|p| {
            json!({
                "state": p.state,
                "action": p.action,
                "phi": p.phi,
                "critical": p.critical,
                // null when K is infinite or the action is optimal
                "k": p.k.as_ref().map(|k| k.value).filter(|v| v.is_finite()),
                "solver": p.k,
            })
        })
        .collect();
    print_json(&json!({
        "tool_version": TOOL_VERSION,
        "model": args.model,
        "tol": args.tol,
        "grid_resolution": args.grid_resolution,
        "rho_star": c.rho_star,
        "bias_span": c.bias_span,
        "diameter": c.diameter,
        "gap_g": c.gap_g,
        "pairs": pairs,
        "critical_set": c.critical_set,
        "c_of_m": c.c_of_m,
        "c_upper": c.c_upper,
        "c_theorem4": c.c_theorem4,
        "bound_holds": c.bound_holds,
    }))
}

/// Writes trajectory and regret CSVs (with provenance sidecars) into `dir`.
fn write_run(dir: &Path, seed: u64, out: &ctmdp::sim::SimulationOutcome<f64>, inputs: &Value) -> CmdResult {
    fs::create_dir_all(dir)?;
    let meta = json!({ "tool_version": TOOL_VERSION, "rng": RNG_NAME, "seed": seed, "inputs": inputs });
    let mut traj = Vec::new();
    out.trajectory.write_csv(&mut traj)?;
    let mut regret = Vec::new();
    write_regret_csv(&mut regret, [(seed, &out.regret)])?;
    for (name, body) in [("trajectory.csv", traj), ("regret.csv", regret)] {
        fs::write(dir.join(name), body)?;
        fs::write(dir.join(format!("{name}.meta.json")), serde_json::to_string_pretty(&meta)? + "\n")?;
    }
    Ok(())
}

fn run_summary(out: &ctmdp::sim::SimulationOutcome<f64>, inputs: Value) -> Value {
    let last = out.regret.final_point();
    json!({
        "tool_version": TOOL_VERSION,
        "rng": RNG_NAME,
        "inputs": inputs,
        "rho_star": out.regret.rho_star,
        "decisions": out.decisions,
        "episodes": out.episodes,
        "total_reward": out.total_reward,
        "final_regret": last.map(|p| p.regret),
    })
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let model = load_valid(&args.model)?;
    let sol = solve_average_reward(&model, REGRET_TOL)?;
    let agent = match &args.policy {
        Some(p) => AgentSpec::FixedPolicy { policy: p.clone() },
        None => AgentSpec::OptimalPolicy,
    };
    let horizon = args.horizon.horizon();
    let mut learner = agent.build(&model, &sol, horizon, args.seed)?;
    let out = simulate(&model, learner.as_mut(), &SimulationConfig::new(horizon, args.seed, sol.gain))?;
    let inputs = json!({ "command": "simulate", "model": args.model, "seed": args.seed, "horizon": horizon, "agent": agent });
    match &args.out {
        Some(dir) => {
            write_run(dir, args.seed, &out, &inputs)?;
            print_json(&run_summary(&out, inputs))
        }
        None => {
            out.trajectory.write_csv(io::stdout().lock())?;
            Ok(())
        }
    }
}

fn parse_agent(name: &str, delta: DeltaPolicy) -> Result<AgentSpec, Failure> {
    Ok(match name {
        "ct-ucrl" => AgentSpec::CtUcrl { delta },
        "greedy-no-optimism" => AgentSpec::GreedyNoOptimism { delta },
        "uniform-random" => AgentSpec::UniformRandom,
        "optimal-policy" => AgentSpec::OptimalPolicy,
        other => return Err(Error::InvalidArgument(format!("unknown agent {other:?}")).into()),
    })
}

fn cmd_learn(args: &LearnArgs) -> CmdResult {
    let delta = DeltaPolicy::parse(&args.delta)?;
    let agent = parse_agent(&args.agent, delta)?;
    let model = load_valid(&args.model)?;
    let sol = solve_average_reward(&model, REGRET_TOL)?;
    let horizon = args.horizon.horizon();
    let mut learner = agent.build(&model, &sol, horizon, args.seed)?;
    let out = simulate(&model, learner.as_mut(), &SimulationConfig::new(horizon, args.seed, sol.gain))?;
    let resolved = delta.resolve(horizon, model.lambda_max()).ok();
    let inputs = json!({
        "command": "learn",
        "model": args.model,
        "seed": args.seed,
        "horizon": horizon,
        "agent": agent,
        "delta": resolved,
    });
    if let Some(dir) = &args.out {
        write_run(dir, args.seed, &out, &inputs)?;
    }
    let mut summary = run_summary(&out, inputs);
    summary["regret"] = serde_json::to_value(&out.regret.points)?;
    print_json(&summary)
}

fn cmd_experiment(args: &ExperimentArgs) -> CmdResult {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(k) = args.seeds {
        config.seeds.count = k;
    }
    if let Some(base) = args.seed {
        config.seeds.base = base;
    }
    if args.jobs.is_some() {
        config.jobs = args.jobs;
    }
    if let Some(out) = &args.out {
        config.output = Some(out.clone());
    }
    if let ModelSource::Path(p) = &config.model {
        if !p.exists() {
            return Err(Failure { code: 1, message: format!("model file {} not found", p.display()) });
        }
    }
    let result = run_experiment(&config)?;
    let dir = config.output.clone().unwrap_or_else(|| PathBuf::from("."));
    let written = write_outputs(&result, &dir)?;
    print_json(&json!({
        "tool_version": TOOL_VERSION,
        "written": written,
        "constants": result.summary.constants,
        "agents": result.summary.agents.iter().map(|a| json!({
            "label": a.label,
            "seeds_completed": a.seeds_completed,
            "failures": a.failures.len(),
            "final": a.checkpoints.last(),
        })).collect::<Vec<_>>(),
    }))
}
