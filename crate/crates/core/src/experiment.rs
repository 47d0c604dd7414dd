//! Multi-seed learning experiments with deterministic aggregation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{generate, GeneratorSpec};
use crate::learner::{Agent, CtUcrl, FixedPolicy, LearnerSpec, UniformRandom};
use crate::lower_bound::{compute_c, DEFAULT_GRID_RESOLUTION};
use crate::model::{validate_model, CtmdpModel, Policy};
use crate::planning::{solve_average_reward, AverageRewardSolution};
use crate::sim::{simulate, write_regret_csv, Horizon, RegretRecord, SimulationConfig, Trajectory, RNG_NAME};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tolerance used for `ρ*` in regret accounting.
pub const REGRET_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Path(PathBuf),
    Generator(GeneratorSpec),
    Inline(CtmdpModel<f64>),
}

/// Confidence level for the learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaPolicy {
    Fixed(f64),
    Preset(DeltaPreset),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaPreset {
    #[serde(rename = "one-over-n")]
    OneOverN,
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::Preset(DeltaPreset::OneOverN)
    }
}

impl DeltaPolicy {
    /// `1/N_max` for step budgets, `1/⌈λ_max T⌉` for time budgets; budgets
    /// below two decisions resolve to 1/2.
    pub fn resolve(&self, horizon: Horizon, lambda_max: f64) -> Result<f64> {
        let delta = match *self {
            DeltaPolicy::Fixed(d) => d,
            DeltaPolicy::Preset(DeltaPreset::OneOverN) => {
                let n = match horizon {
                    Horizon::Steps(n) => n as f64,
                    Horizon::Time(t) => (lambda_max * t).ceil(),
                };
                1.0 / n.max(2.0)
            }
        };
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(delta)
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text == "one-over-n" {
            return Ok(DeltaPolicy::Preset(DeltaPreset::OneOverN));
        }
        let d: f64 = text.parse().map_err(|_| Error::InvalidArgument(format!("cannot parse delta {text:?}")))?;
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::InvalidDelta(d));
        }
        Ok(DeltaPolicy::Fixed(d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentSpec {
    CtUcrl {
        #[serde(default)]
        delta: DeltaPolicy,
    },
    GreedyNoOptimism {
        #[serde(default)]
        delta: DeltaPolicy,
    },
    UniformRandom,
    FixedPolicy {
        policy: Vec<usize>,
    },
    /// The planner's greedy policy for the true model.
    OptimalPolicy,
}

impl AgentSpec {
    pub fn label(&self) -> &'static str {
        match self {
            AgentSpec::CtUcrl { .. } => "ct-ucrl",
            AgentSpec::GreedyNoOptimism { .. } => "greedy-no-optimism",
            AgentSpec::UniformRandom => "uniform-random",
            AgentSpec::FixedPolicy { .. } => "fixed-policy",
            AgentSpec::OptimalPolicy => "optimal-policy",
        }
    }

    fn delta(&self) -> Option<DeltaPolicy> {
        match self {
            AgentSpec::CtUcrl { delta } | AgentSpec::GreedyNoOptimism { delta } => Some(*delta),
            _ => None,
        }
    }

    /// Builds the agent for one seed.
    pub fn build(
        &self,
        model: &CtmdpModel<f64>,
        solution: &AverageRewardSolution<f64>,
        horizon: Horizon,
        seed: u64,
    ) -> Result<Box<dyn Agent<f64> + Send>> {
        let learner_spec = |delta: &DeltaPolicy| -> Result<LearnerSpec<f64>> {
            Ok(LearnerSpec {
                num_states: model.num_states(),
                num_actions: model.num_actions(),
                rewards: model.rewards().to_vec(),
                delta: delta.resolve(horizon, model.lambda_max())?,
                lambda_min: model.lambda_min(),
                lambda_max: model.lambda_max(),
            })
        };
        Ok(match self {
            AgentSpec::CtUcrl { delta } => Box::new(CtUcrl::new(learner_spec(delta)?)?),
            AgentSpec::GreedyNoOptimism { delta } => Box::new(CtUcrl::point_estimate(learner_spec(delta)?)?),
            AgentSpec::UniformRandom => Box::new(UniformRandom::new(model.num_actions(), seed)),
            AgentSpec::FixedPolicy { policy } => {
                if policy.len() != model.num_states() {
                    return Err(Error::InvalidArgument("fixed policy length does not match the model".into()));
                }
                Box::new(FixedPolicy(Policy::new(policy.clone(), model.num_actions())?))
            }
            AgentSpec::OptimalPolicy => Box::new(FixedPolicy(solution.greedy_policy.clone())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRange {
    pub count: u64,
    #[serde(default)]
    pub base: u64,
}

impl SeedRange {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count).map(|i| self.base + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub agents: Vec<AgentSpec>,
    pub horizon: Horizon,
    pub seeds: SeedRange,
    /// In horizon units; the geometric grid when absent.
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
    /// Output directory for CSV and summary files.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Also write one trajectory CSV per (agent, seed).
    #[serde(default)]
    pub trajectories: bool,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default = "default_grid")]
    pub grid_resolution: f64,
}

fn default_grid() -> f64 {
    DEFAULT_GRID_RESOLUTION
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        // Model paths are relative to the config file.
        if let ModelSource::Path(p) = &mut config.model {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.count == 0 {
            return Err(Error::InvalidArgument("need at least one seed".into()));
        }
        match self.horizon {
            Horizon::Time(t) if !(t >= 0.0 && t.is_finite()) => {
                return Err(Error::InvalidArgument("time horizon must be finite and non-negative".into()))
            }
            _ => {}
        }
        if self.agents.is_empty() {
            return Err(Error::InvalidArgument("no agents configured".into()));
        }
        for agent in &self.agents {
            if let Some(DeltaPolicy::Fixed(d)) = agent.delta() {
                if !(d > 0.0 && d < 1.0) {
                    return Err(Error::InvalidDelta(d));
                }
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidArgument("jobs must be positive".into()));
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<CtmdpModel<f64>> {
        let model = match &self.model {
            ModelSource::Path(p) => CtmdpModel::load(p)?,
            ModelSource::Generator(spec) => generate(spec)?,
            ModelSource::Inline(m) => m.clone(),
        };
        validate_model(&model).into_result()?;
        Ok(model)
    }
}

/// Instance constants for the summary; each entry is absent when it could not
/// be computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryConstants {
    pub rho_star: f64,
    pub gap_g: Option<f64>,
    pub bias_span: Option<f64>,
    pub diameter: Option<f64>,
    pub c_of_m: Option<f64>,
    pub c_upper: Option<f64>,
    pub c_theorem4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    #[serde(rename = "T")]
    pub time: f64,
    pub mean_regret: f64,
    pub std_error: f64,
    /// `mean_regret / log(λ_max T + 2)`.
    pub log_ratio: f64,
    pub mean_decisions: f64,
    pub mean_episodes: f64,
    pub max_episodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub label: String,
    pub spec: AgentSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub seeds_completed: usize,
    pub failures: Vec<SeedFailure>,
    pub checkpoints: Vec<CheckpointSummary>,
    /// Final episode count per completed seed, in seed order.
    pub episodes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub tool_version: String,
    pub rng: String,
    pub config: ExperimentConfig,
    pub constants: SummaryConstants,
    pub agents: Vec<AgentSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub regret: RegretRecord<f64>,
    pub decisions: u64,
    pub episodes: u64,
    pub trajectory: Option<Trajectory<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuns {
    pub label: String,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub summary: ExperimentSummary,
    pub agents: Vec<AgentRuns>,
}

fn instance_constants(model: &CtmdpModel<f64>, solution: &AverageRewardSolution<f64>, grid: f64) -> SummaryConstants {
    let mut out = SummaryConstants { rho_star: solution.gain, ..Default::default() };
    match compute_c(model, solution, grid) {
        Ok(c) => {
            out.gap_g = c.gap_g;
            out.bias_span = Some(c.bias_span);
            out.diameter = Some(c.diameter);
            out.c_of_m = Some(c.c_of_m);
            out.c_upper = c.c_upper;
            out.c_theorem4 = Some(c.c_theorem4);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Distinct labels: the agent kind, suffixed with its position on clashes.
fn labels(agents: &[AgentSpec]) -> Vec<String> {
    agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let clash = agents.iter().filter(|b| b.label() == a.label()).count() > 1;
            if clash {
                format!("{}-{}", a.label(), i)
            } else {
                a.label().to_string()
            }
        })
        .collect()
}

fn run_seed(
    model: &CtmdpModel<f64>,
    solution: &AverageRewardSolution<f64>,
    config: &ExperimentConfig,
    agent: &AgentSpec,
    seed: u64,
) -> Result<SeedRun> {
    let mut learner = agent.build(model, solution, config.horizon, seed)?;
    let sim = SimulationConfig {
        horizon: config.horizon,
        seed,
        initial_state: 0,
        checkpoints: config.checkpoints.clone(),
        rho_star: solution.gain,
        record_trajectory: config.trajectories,
    };
    let out = simulate(model, learner.as_mut(), &sim)?;
    Ok(SeedRun {
        seed,
        regret: out.regret,
        decisions: out.decisions,
        episodes: out.episodes,
        trajectory: config.trajectories.then_some(out.trajectory),
    })
}

fn summarize(runs: &[SeedRun], lambda_max: f64) -> Vec<CheckpointSummary> {
    let Some(first) = runs.first() else { return Vec::new() };
    (0..first.regret.points.len())
        .map(|i| {
            let time = first.regret.points[i].time;
            let regrets: Vec<f64> = runs.iter().map(|r| r.regret.points[i].regret).collect();
            let stats = crate::sim::MeanEstimate::from_samples(&regrets);
            let k = runs.len() as f64;
            CheckpointSummary {
                time,
                mean_regret: stats.mean,
                std_error: stats.std_error,
                log_ratio: stats.mean / (lambda_max * time + 2.0).ln(),
                mean_decisions: runs.iter().map(|r| r.regret.points[i].decisions as f64).sum::<f64>() / k,
                mean_episodes: runs.iter().map(|r| r.regret.points[i].episodes as f64).sum::<f64>() / k,
                max_episodes: runs.iter().map(|r| r.regret.points[i].episodes).max().unwrap_or(0),
            }
        })
        .collect()
}

/// Runs every agent on every seed. Seed failures are recorded and the rest
/// proceed; results are ordered by seed regardless of scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let model = config.load_model()?;
    let solution = solve_average_reward(&model, REGRET_TOL)?;
    let constants = instance_constants(&model, &solution, config.grid_resolution);
    let seeds = config.seeds.seeds();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = config.jobs {
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let names = labels(&config.agents);
    let mut summaries = Vec::new();
    let mut all_runs = Vec::new();
    for (agent, label) in config.agents.iter().zip(names) {
        let outcomes: Vec<(u64, Result<SeedRun>)> = pool.install(|| {
            use rayon::prelude::*;
            seeds.par_iter().map(|&seed| (seed, run_seed(&model, &solution, config, agent, seed))).collect()
        });
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for (seed, outcome) in outcomes {
            match outcome {
                Ok(run) => runs.push(run),
                Err(e) => failures.push(SeedFailure { seed, error: e.to_string() }),
            }
        }
        summaries.push(AgentSummary {
            label: label.clone(),
            spec: agent.clone(),
            delta: agent.delta().and_then(|d| d.resolve(config.horizon, model.lambda_max()).ok()),
            seeds_completed: runs.len(),
            failures,
            checkpoints: summarize(&runs, model.lambda_max()),
            episodes: runs.iter().map(|r| r.episodes).collect(),
        });
        all_runs.push(AgentRuns { label, runs });
    }

    Ok(ExperimentResult {
        summary: ExperimentSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            rng: RNG_NAME.to_string(),
            config: config.clone(),
            constants,
            agents: summaries,
        },
        agents: all_runs,
    })
}

/// Provenance written next to every CSV file.
#[derive(Debug, Clone, Serialize)]
struct Sidecar<'a> {
    tool_version: &'a str,
    rng: &'a str,
    agent: &'a str,
    seeds: Vec<u64>,
    config: &'a ExperimentConfig,
}

fn write_with_sidecar(path: &Path, body: &[u8], meta: &Sidecar<'_>) -> Result<()> {
    fs::write(path, body)?;
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    fs::write(PathBuf::from(name), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Writes `summary.json`, `<agent>_regret.csv` and optional trajectories into
/// `dir`; returns the written data files.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let config = &result.summary.config;
    for agent in &result.agents {
        let mut buf = Vec::new();
        write_regret_csv(&mut buf, agent.runs.iter().map(|r| (r.seed, &r.regret)))?;
        let path = dir.join(format!("{}_regret.csv", agent.label));
        let meta = Sidecar {
            tool_version: TOOL_VERSION,
            rng: RNG_NAME,
            agent: &agent.label,
            seeds: agent.runs.iter().map(|r| r.seed).collect(),
            config,
        };
        write_with_sidecar(&path, &buf, &meta)?;
        written.push(path);
        for run in &agent.runs {
            if let Some(t) = &run.trajectory {
                let mut buf = Vec::new();
                t.write_csv(&mut buf)?;
                let path = dir.join(format!("{}_seed{}_trajectory.csv", agent.label, run.seed));
                write_with_sidecar(&path, &buf, &Sidecar { seeds: vec![run.seed], ..meta.clone() })?;
                written.push(path);
            }
        }
    }
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&result.summary)? + "\n")?;
    written.push(path);
    Ok(written)
}
