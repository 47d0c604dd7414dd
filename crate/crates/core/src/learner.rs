//! Agents: the episodic optimistic learner and the experimental baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{build_confidence_set, StatisticsTable};
use crate::model::Policy;
use crate::optimism::{extended_value_iteration, extended_value_iteration_capped, OptimisticSolution};
use crate::scalar::Scalar;

/// ChaCha stream used by agents that draw their own randomness; the simulator
/// uses stream 0 of the same seed.
pub const AGENT_STREAM: u64 = 1;

/// Sweep cap for the point-estimate baseline, whose empirical model may be
/// multichain; it keeps the last greedy policy instead of failing.
const POINT_ESTIMATE_SWEEPS: usize = 100_000;

/// What the simulator needs from a decision maker.
pub trait Agent<T: Scalar> {
    fn act(&mut self, state: usize) -> Result<usize>;

    fn observe(&mut self, state: usize, action: usize, holding_time: T, next_state: usize) -> Result<()>;

    /// Number of policy computations so far (1 for stationary agents).
    fn episodes(&self) -> u64 {
        1
    }

    fn name(&self) -> &'static str;
}

/// Prior knowledge handed to a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LearnerSpec<T> {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-major over `(state, action)`.
    pub rewards: Vec<T>,
    pub delta: T,
    pub lambda_min: T,
    pub lambda_max: T,
}

impl<T: Scalar> LearnerSpec<T> {
    fn check(&self) -> Result<()> {
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(Error::InvalidDelta(self.delta.as_f64()));
        }
        if !(self.lambda_min > T::zero() && self.lambda_min <= self.lambda_max) {
            return Err(Error::InvalidArgument("need 0 < lambda_min <= lambda_max".into()));
        }
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidArgument("need at least one state and one action".into()));
        }
        if self.rewards.len() != self.num_states * self.num_actions {
            return Err(Error::InvalidArgument("reward table has the wrong size".into()));
        }
        if self.rewards.iter().any(|r| !(*r >= T::zero() && *r <= T::one())) {
            return Err(Error::InvalidArgument("rewards must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Serializable learner state: everything needed to resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LearnerCheckpoint<T> {
    pub spec: LearnerSpec<T>,
    pub optimistic: bool,
    pub statistics: StatisticsTable<T>,
    pub decision: u64,
    pub episode: u64,
    pub episode_start: u64,
    pub counts_at_start: Vec<u64>,
    pub episode_visits: Vec<u64>,
    pub episode_starts: Vec<u64>,
    pub solution: OptimisticSolution<T>,
    pub pending: Option<(usize, usize)>,
}

/// Episodic optimistic learner (CT-UCRL).
///
/// Decisions are numbered from 1. An episode ends before the action at which
/// the in-episode visit count of the chosen pair would reach its count from
/// before the episode (at least 1); the next episode rebuilds the confidence
/// set and reruns extended value iteration with `ε = 1/√t_k`.
///
/// With `optimistic == false` the same schedule runs on the point estimates
/// (all radii zero): the greedy no-optimism baseline.
#[derive(Debug, Clone)]
pub struct CtUcrl<T: Scalar> {
    spec: LearnerSpec<T>,
    optimistic: bool,
    stats: StatisticsTable<T>,
    decision: u64,
    episode: u64,
    episode_start: u64,
    counts_at_start: Vec<u64>,
    episode_visits: Vec<u64>,
    episode_starts: Vec<u64>,
    solution: OptimisticSolution<T>,
    pending: Option<(usize, usize)>,
}

impl<T: Scalar> CtUcrl<T> {
    pub fn new(spec: LearnerSpec<T>) -> Result<Self> {
        Self::with_mode(spec, true)
    }

    /// The greedy no-optimism baseline.
    pub fn point_estimate(spec: LearnerSpec<T>) -> Result<Self> {
        Self::with_mode(spec, false)
    }

    fn with_mode(spec: LearnerSpec<T>, optimistic: bool) -> Result<Self> {
        spec.check()?;
        let stats = StatisticsTable::new(spec.num_states, spec.num_actions, spec.delta, spec.lambda_min)?;
        Self::from_statistics(spec, stats, optimistic)
    }

    /// Starts the first episode from already-collected statistics; the episode
    /// start index is one past the number of recorded decisions.
    pub fn from_statistics(spec: LearnerSpec<T>, stats: StatisticsTable<T>, optimistic: bool) -> Result<Self> {
        spec.check()?;
        if stats.num_states() != spec.num_states || stats.num_actions() != spec.num_actions {
            return Err(Error::InvalidArgument("statistics do not match the learner's dimensions".into()));
        }
        let counts = stats.visit_counts();
        let decision = counts.iter().sum::<u64>() + 1;
        let pairs = counts.len();
        let solution = solve_episode(&spec, &stats, decision, optimistic)?;
        Ok(Self {
            spec,
            optimistic,
            stats,
            decision,
            episode: 1,
            episode_start: decision,
            counts_at_start: counts,
            episode_visits: vec![0; pairs],
            episode_starts: vec![decision],
            solution,
            pending: None,
        })
    }

    pub fn restore(checkpoint: LearnerCheckpoint<T>) -> Result<Self> {
        let LearnerCheckpoint {
            spec,
            optimistic,
            statistics,
            decision,
            episode,
            episode_start,
            counts_at_start,
            episode_visits,
            episode_starts,
            solution,
            pending,
        } = checkpoint;
        spec.check()?;
        let pairs = spec.num_states * spec.num_actions;
        if statistics.num_states() != spec.num_states
            || statistics.num_actions() != spec.num_actions
            || counts_at_start.len() != pairs
            || episode_visits.len() != pairs
            || solution.policy_tilde.len() != spec.num_states
        {
            return Err(Error::InvalidArgument("checkpoint dimensions are inconsistent".into()));
        }
        Ok(Self {
            spec,
            optimistic,
            stats: statistics,
            decision,
            episode,
            episode_start,
            counts_at_start,
            episode_visits,
            episode_starts,
            solution,
            pending,
        })
    }

    pub fn checkpoint(&self) -> LearnerCheckpoint<T> {
        LearnerCheckpoint {
            spec: self.spec.clone(),
            optimistic: self.optimistic,
            statistics: self.stats.clone(),
            decision: self.decision,
            episode: self.episode,
            episode_start: self.episode_start,
            counts_at_start: self.counts_at_start.clone(),
            episode_visits: self.episode_visits.clone(),
            episode_starts: self.episode_starts.clone(),
            solution: self.solution.clone(),
            pending: self.pending,
        }
    }

    /// 1-based index of the next decision.
    pub fn decision_index(&self) -> u64 {
        self.decision
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn episode_start(&self) -> u64 {
        self.episode_start
    }

    /// 1-based decision indices at which each episode started.
    pub fn episode_starts(&self) -> &[u64] {
        &self.episode_starts
    }

    pub fn statistics(&self) -> &StatisticsTable<T> {
        &self.stats
    }

    pub fn counts_at_start(&self, s: usize, a: usize) -> u64 {
        self.counts_at_start[s * self.spec.num_actions + a]
    }

    pub fn episode_visits(&self, s: usize, a: usize) -> u64 {
        self.episode_visits[s * self.spec.num_actions + a]
    }

    pub fn current_solution(&self) -> &OptimisticSolution<T> {
        &self.solution
    }

    pub fn current_policy(&self) -> &Policy {
        &self.solution.policy_tilde
    }

    fn episode_exhausted(&self, pair: usize) -> bool {
        self.episode_visits[pair] >= self.counts_at_start[pair].max(1)
    }

    fn start_episode(&mut self) -> Result<()> {
        self.episode += 1;
        self.episode_start = self.decision;
        self.counts_at_start = self.stats.visit_counts();
        self.episode_visits.iter_mut().for_each(|v| *v = 0);
        self.episode_starts.push(self.decision);
        self.solution = solve_episode(&self.spec, &self.stats, self.episode_start, self.optimistic)?;
        Ok(())
    }
}

fn solve_episode<T: Scalar>(
    spec: &LearnerSpec<T>,
    stats: &StatisticsTable<T>,
    episode_start: u64,
    optimistic: bool,
) -> Result<OptimisticSolution<T>> {
    let conf = build_confidence_set(stats, episode_start, spec.lambda_max)?;
    let epsilon = T::one() / T::from_count(episode_start).sqrt();
    if optimistic {
        extended_value_iteration(&conf, &spec.rewards, epsilon)
    } else {
        Ok(extended_value_iteration_capped(&conf.with_zero_radii(), &spec.rewards, epsilon, POINT_ESTIMATE_SWEEPS)?.0)
    }
}

impl<T: Scalar> Agent<T> for CtUcrl<T> {
    fn act(&mut self, state: usize) -> Result<usize> {
        if state >= self.spec.num_states {
            return Err(Error::InvalidArgument(format!("state {state} out of range")));
        }
        if let Some((s, a)) = self.pending {
            return Err(Error::OutOfOrderObservation { state: s, action: a, pending: self.pending });
        }
        let na = self.spec.num_actions;
        let mut action = self.solution.policy_tilde.action(state);
        if self.episode_exhausted(state * na + action) {
            self.start_episode()?;
            action = self.solution.policy_tilde.action(state);
        }
        self.pending = Some((state, action));
        Ok(action)
    }

    fn observe(&mut self, state: usize, action: usize, holding_time: T, next_state: usize) -> Result<()> {
        if self.pending != Some((state, action)) {
            return Err(Error::OutOfOrderObservation { state, action, pending: self.pending });
        }
        self.stats.record(state, action, holding_time, next_state)?;
        self.episode_visits[state * self.spec.num_actions + action] += 1;
        self.decision += 1;
        self.pending = None;
        Ok(())
    }

    fn episodes(&self) -> u64 {
        self.episode
    }

    fn name(&self) -> &'static str {
        if self.optimistic {
            "ct-ucrl"
        } else {
            "greedy-no-optimism"
        }
    }
}

/// Picks actions uniformly at random from its own seeded stream.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    num_actions: usize,
    rng: ChaCha8Rng,
}

impl UniformRandom {
    pub fn new(num_actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(AGENT_STREAM);
        Self { num_actions, rng }
    }
}

impl<T: Scalar> Agent<T> for UniformRandom {
    fn act(&mut self, _state: usize) -> Result<usize> {
        Ok(if self.num_actions == 1 { 0 } else { self.rng.gen_range(0..self.num_actions) })
    }

    fn observe(&mut self, _: usize, _: usize, _: T, _: usize) -> Result<()> {
        Ok(())
    }

    fn name(&self) -> &'static str {
        "uniform-random"
    }
}

/// Plays a fixed stationary policy.
#[derive(Debug, Clone)]
pub struct FixedPolicy(pub Policy);

impl<T: Scalar> Agent<T> for FixedPolicy {
    fn act(&mut self, state: usize) -> Result<usize> {
        if state >= self.0.len() {
            return Err(Error::InvalidArgument(format!("state {state} out of range")));
        }
        Ok(self.0.action(state))
    }

    fn observe(&mut self, _: usize, _: usize, _: T, _: usize) -> Result<()> {
        Ok(())
    }

    fn name(&self) -> &'static str {
        "fixed-policy"
    }
}
