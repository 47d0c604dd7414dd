//! Event-driven simulation with continuous-time regret accounting.

use std::io::Write;

use rand::distributions::{Open01, Standard};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{Agent, FixedPolicy};
use crate::model::{CtmdpModel, Policy};
use crate::scalar::Scalar;

/// Generator used for every random draw, recorded in output metadata.
pub const RNG_NAME: &str = "rand_chacha 0.3 ChaCha8Rng, seed_from_u64(seed); stream 0 environment, stream 1 agent";

/// ChaCha stream used by the environment.
pub const ENVIRONMENT_STREAM: u64 = 0;

/// Number of halvings in the default checkpoint grid.
pub const DEFAULT_CHECKPOINT_LEVELS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Wall-clock time budget.
    Time(f64),
    /// Number of decisions.
    Steps(u64),
}

impl Horizon {
    fn extent(&self) -> f64 {
        match *self {
            Horizon::Time(t) => t,
            Horizon::Steps(n) => n as f64,
        }
    }

    /// `{H/2^j : j = 0..=levels}` in ascending order; step grids are floored,
    /// deduplicated and exclude zero.
    pub fn geometric_checkpoints(&self, levels: u32) -> Vec<f64> {
        let top = self.extent();
        if top <= 0.0 {
            return Vec::new();
        }
        let mut grid: Vec<f64> = (0..=levels).rev().map(|j| top / 2f64.powi(j as i32)).collect();
        if let Horizon::Steps(_) = self {
            grid.iter_mut().for_each(|c| *c = c.floor());
            grid.retain(|&c| c >= 1.0);
            grid.dedup();
        }
        grid
    }
}

/// One decision epoch; `n` is 0-based and `clock` is the epoch's start time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Step<T> {
    pub n: u64,
    pub state: usize,
    pub action: usize,
    pub holding_time: T,
    pub reward: T,
    pub clock: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Trajectory<T> {
    pub steps: Vec<Step<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "n,state,action,holding_time,reward,clock")?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.n,
                s.state,
                s.action,
                fmt_float(s.holding_time),
                fmt_float(s.reward),
                fmt_float(s.clock)
            )?;
        }
        Ok(())
    }
}

/// Regret at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegretPoint<T> {
    pub time: T,
    pub decisions: u64,
    pub cum_reward: T,
    pub regret: T,
    /// Agent episodes started by this checkpoint.
    pub episodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegretRecord<T> {
    pub rho_star: T,
    pub points: Vec<RegretPoint<T>>,
}

impl<T: Scalar> RegretRecord<T> {
    pub fn final_point(&self) -> Option<&RegretPoint<T>> {
        self.points.last()
    }
}

/// Writes `seed,T,decisions,cum_reward,regret` rows for several runs.
pub fn write_regret_csv<'a, T: Scalar>(
    mut out: impl Write,
    runs: impl IntoIterator<Item = (u64, &'a RegretRecord<T>)>,
) -> Result<()> {
    writeln!(out, "seed,T,decisions,cum_reward,regret")?;
    for (seed, record) in runs {
        for p in &record.points {
            writeln!(
                out,
                "{},{},{},{},{}",
                seed,
                fmt_float(p.time),
                p.decisions,
                fmt_float(p.cum_reward),
                fmt_float(p.regret)
            )?;
        }
    }
    Ok(())
}

/// 17 significant digits, fixed layout.
pub fn fmt_float<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SimulationConfig<T> {
    pub horizon: Horizon,
    pub seed: u64,
    #[serde(default)]
    pub initial_state: usize,
    /// In horizon units (time or decisions); defaults to the geometric grid.
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
    pub rho_star: T,
    #[serde(default = "yes")]
    pub record_trajectory: bool,
}

fn yes() -> bool {
    true
}

impl<T: Scalar> SimulationConfig<T> {
    pub fn new(horizon: Horizon, seed: u64, rho_star: T) -> Self {
        Self { horizon, seed, initial_state: 0, checkpoints: None, rho_star, record_trajectory: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SimulationOutcome<T> {
    pub trajectory: Trajectory<T>,
    pub regret: RegretRecord<T>,
    pub decisions: u64,
    pub episodes: u64,
    /// Reward of all decisions made within the horizon.
    pub total_reward: T,
}

/// The environment side of a run: owns the generator and samples transitions.
#[derive(Debug, Clone)]
pub struct Environment<'m, T> {
    model: &'m CtmdpModel<T>,
    rng: ChaCha8Rng,
}

impl<'m, T: Scalar> Environment<'m, T> {
    pub fn new(model: &'m CtmdpModel<T>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ENVIRONMENT_STREAM);
        Self { model, rng }
    }

    /// Draws `(τ, s')` for taking `a` in `s`.
    pub fn step(&mut self, s: usize, a: usize) -> (T, usize) {
        let u: f64 = self.rng.sample(Open01);
        let tau = -T::lit(u).ln() / self.model.rate(s, a);
        let v: f64 = self.rng.sample(Standard);
        (tau, sample_index(self.model.transition(s, a), T::lit(v)))
    }
}

fn sample_index<T: Scalar>(p: &[T], u: T) -> usize {
    let mut acc = T::zero();
    let mut last = 0;
    for (j, &pj) in p.iter().enumerate() {
        if pj > T::zero() {
            acc = acc + pj;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

struct Ledger<T> {
    grid: Vec<T>,
    next: usize,
    rho_star: T,
    points: Vec<RegretPoint<T>>,
}

impl<T: Scalar> Ledger<T> {
    fn push(&mut self, time: T, decisions: u64, cum_reward: T, episodes: u64) {
        self.points.push(RegretPoint { time, decisions, cum_reward, regret: time * self.rho_star - cum_reward, episodes });
        self.next += 1;
    }
}

/// Runs `agent` on `model` until the horizon.
///
/// For a time horizon `T` every decision made at a clock `S_n ≤ T` counts,
/// including one whose holding period straddles `T`; that last observation is
/// not delivered to the agent. The regret at checkpoint `t` is
/// `t·ρ* − Σ_{S_n ≤ t} r(s_n, a_n)`. For a step horizon, checkpoint `c` reports
/// the regret at the clock `S_c` after `c` completed decisions.
pub fn simulate<T: Scalar, A: Agent<T> + ?Sized>(
    model: &CtmdpModel<T>,
    agent: &mut A,
    config: &SimulationConfig<T>,
) -> Result<SimulationOutcome<T>> {
    let extent = config.horizon.extent();
    if !(extent >= 0.0 && extent.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be finite and non-negative, got {extent}")));
    }
    if config.initial_state >= model.num_states() {
        return Err(Error::InvalidArgument(format!("initial state {} out of range", config.initial_state)));
    }
    let mut grid: Vec<f64> = match &config.checkpoints {
        Some(c) => c.iter().copied().filter(|&c| c >= 0.0 && c <= extent).collect(),
        None => config.horizon.geometric_checkpoints(DEFAULT_CHECKPOINT_LEVELS),
    };
    if let Horizon::Steps(_) = config.horizon {
        grid.iter_mut().for_each(|c| *c = c.floor());
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let mut ledger = Ledger { grid: grid.into_iter().map(T::lit).collect(), next: 0, rho_star: config.rho_star, points: Vec::new() };

    let mut env = Environment::new(model, config.seed);
    let mut trajectory = Trajectory::default();
    let mut state = config.initial_state;
    let mut clock = T::zero();
    let mut cum = T::zero();
    let mut n: u64 = 0;

    match config.horizon {
        Horizon::Time(t) if t > 0.0 => {
            let horizon = T::lit(t);
            while clock <= horizon {
                while ledger.next < ledger.grid.len() && ledger.grid[ledger.next] < clock {
                    let at = ledger.grid[ledger.next];
                    ledger.push(at, n, cum, agent.episodes());
                }
                let action = agent.act(state)?;
                let (tau, next) = env.step(state, action);
                let reward = model.reward(state, action);
                if config.record_trajectory {
                    trajectory.steps.push(Step { n, state, action, holding_time: tau, reward, clock });
                }
                cum = cum + reward;
                n += 1;
                let done = clock + tau;
                if done <= horizon {
                    agent.observe(state, action, tau, next)?;
                }
                clock = done;
                state = next;
            }
            while ledger.next < ledger.grid.len() {
                let at = ledger.grid[ledger.next];
                ledger.push(at, n, cum, agent.episodes());
            }
        }
        Horizon::Time(_) => {}
        Horizon::Steps(budget) => {
            let flush = |ledger: &mut Ledger<T>, n: u64, clock: T, cum: T, episodes: u64| {
                while ledger.next < ledger.grid.len() && ledger.grid[ledger.next] <= T::from_count(n) {
                    ledger.push(clock, n, cum, episodes);
                }
            };
            while n < budget {
                let action = agent.act(state)?;
                let (tau, next) = env.step(state, action);
                let reward = model.reward(state, action);
                if config.record_trajectory {
                    trajectory.steps.push(Step { n, state, action, holding_time: tau, reward, clock });
                }
                agent.observe(state, action, tau, next)?;
                cum = cum + reward;
                n += 1;
                clock = clock + tau;
                state = next;
                flush(&mut ledger, n, clock, cum, agent.episodes());
            }
        }
    }

    Ok(SimulationOutcome {
        trajectory,
        regret: RegretRecord { rho_star: config.rho_star, points: ledger.points },
        decisions: n,
        episodes: if n == 0 { 0 } else { agent.episodes() },
        total_reward: cum,
    })
}

/// Mean and standard error over independent runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let k = xs.len();
        if k == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, samples: 0 };
        }
        let mean = xs.iter().sum::<f64>() / k as f64;
        let std_error = if k > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error, samples: k }
    }
}

fn policy_runs<T: Scalar>(
    model: &CtmdpModel<T>,
    policy: &Policy,
    horizon: T,
    seeds: &[u64],
) -> Result<Vec<SimulationOutcome<T>>> {
    if policy.len() != model.num_states() {
        return Err(Error::InvalidArgument("policy length does not match the model".into()));
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let mut config = SimulationConfig::new(Horizon::Time(horizon.as_f64()), seed, T::zero());
            config.checkpoints = Some(Vec::new());
            config.record_trajectory = false;
            simulate(model, &mut FixedPolicy(policy.clone()), &config)
        })
        .collect()
}

/// Monte-Carlo estimate of a stationary policy's gain: reward collected by
/// `horizon` divided by `horizon`, one run per seed.
pub fn estimate_policy_gain_mc<T: Scalar>(
    model: &CtmdpModel<T>,
    policy: &Policy,
    horizon: T,
    seeds: &[u64],
) -> Result<MeanEstimate> {
    if !(horizon > T::zero()) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let runs = policy_runs(model, policy, horizon, seeds)?;
    let gains: Vec<f64> = runs.iter().map(|r| r.total_reward.as_f64() / horizon.as_f64()).collect();
    Ok(MeanEstimate::from_samples(&gains))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountBoundsReport {
    /// Empirical `N(T) − 1`.
    pub count: MeanEstimate,
    pub lower: f64,
    pub upper: f64,
    pub passed: bool,
}

/// Checks that the mean of `N(T) − 1` lies within
/// `[λ_min T − 4√(λ_max T), λ_max T + 4√(λ_max T)]`.
pub fn count_bounds_check<T: Scalar>(
    model: &CtmdpModel<T>,
    policy: &Policy,
    horizon: T,
    seeds: &[u64],
) -> Result<CountBoundsReport> {
    if !(horizon > T::zero()) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let runs = policy_runs(model, policy, horizon, seeds)?;
    let counts: Vec<f64> = runs.iter().map(|r| r.decisions as f64 - 1.0).collect();
    let count = MeanEstimate::from_samples(&counts);
    let t = horizon.as_f64();
    let (lmin, lmax) = (model.lambda_min().as_f64(), model.lambda_max().as_f64());
    let slack = 4.0 * (lmax * t).sqrt();
    let (lower, upper) = (lmin * t - slack, lmax * t + slack);
    Ok(CountBoundsReport { count, lower, upper, passed: count.mean >= lower && count.mean <= upper })
}
