//! Average-reward planning on a known CTMDP.
//!
//! The optimality equation `0 = max_a { r − ρ/λ + p·h − h(s) }` is solved by
//! relative value iteration on the uniformized discrete-time MDP. Uniformization
//! uses `Λ = λ_max`; a lazy self-loop mix with weight [`APERIODICITY_MIX`] is
//! applied on top so the span of successive differences contracts even when
//! the uniformized chain is periodic. The mix leaves `h` unchanged and scales
//! the discrete gain by the mix weight, which is divided back out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_dense, strongly_connected};
use crate::model::{CtmdpModel, Policy};
use crate::scalar::{dot, effective_tol, min_max, span, Scalar};

/// Weight `α` of the lazy mix `p̌ ← (1−α)I + α p̌`, `ř ← α ř`.
pub const APERIODICITY_MIX: f64 = 0.9;

/// Hard cap on value-iteration sweeps; exceeding it is an error.
pub const MAX_SWEEPS: usize = 1_000_000;

/// Actions whose optimality deficit is at most this multiple of the solver
/// tolerance are treated as optimal.
pub const OPTIMAL_SET_FACTOR: f64 = 10.0;

/// Discrete-time MDP equivalent to a CTMDP under the average-reward criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformizedMdp<T> {
    num_states: usize,
    num_actions: usize,
    reward_check: Vec<T>,
    transition_check: Vec<T>,
    uniformization_rate: T,
    aperiodicity_mix: T,
}

impl<T: Scalar> UniformizedMdp<T> {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Per-step reward `ř(s, a)`.
    pub fn reward_check(&self, s: usize, a: usize) -> T {
        self.reward_check[s * self.num_actions + a]
    }

    pub fn transition_check(&self, s: usize, a: usize) -> &[T] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition_check[start..start + self.num_states]
    }

    pub fn uniformization_rate(&self) -> T {
        self.uniformization_rate
    }

    pub fn aperiodicity_mix(&self) -> T {
        self.aperiodicity_mix
    }

    /// Applies the lazy mix with weight `alpha ∈ (0, 1]` on top of the current one.
    pub fn mixed(&self, alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidArgument(format!("aperiodicity mix {alpha} not in (0, 1]")));
        }
        let n = self.num_states;
        let mut out = self.clone();
        out.reward_check.iter_mut().for_each(|r| *r = *r * alpha);
        for (row_index, row) in out.transition_check.chunks_mut(n).enumerate() {
            let s = row_index / self.num_actions;
            for (j, p) in row.iter_mut().enumerate() {
                *p = *p * alpha;
                if j == s {
                    *p = *p + (T::one() - alpha);
                }
            }
        }
        out.aperiodicity_mix = self.aperiodicity_mix * alpha;
        Ok(out)
    }
}

/// Uniformizes at rate `Λ = λ_max` (no aperiodicity mix).
pub fn uniformize<T: Scalar>(model: &CtmdpModel<T>) -> UniformizedMdp<T> {
    let (n, na) = (model.num_states(), model.num_actions());
    let big = model.lambda_max();
    let mut reward_check = Vec::with_capacity(n * na);
    let mut transition_check = Vec::with_capacity(n * na * n);
    for s in 0..n {
        for a in 0..na {
            let scale = model.rate(s, a) / big;
            reward_check.push(model.reward(s, a) * scale);
            for (j, &p) in model.transition(s, a).iter().enumerate() {
                transition_check.push(if j == s { T::one() - (T::one() - p) * scale } else { p * scale });
            }
        }
    }
    UniformizedMdp {
        num_states: n,
        num_actions: na,
        reward_check,
        transition_check,
        uniformization_rate: big,
        aperiodicity_mix: T::one(),
    }
}

/// Optimal gain, bias and greedy policy of a CTMDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AverageRewardSolution<T> {
    /// Optimal reward per unit time `ρ*`.
    pub gain: T,
    /// Bias `h*`, normalized so that its minimum is zero.
    pub bias: Vec<T>,
    pub greedy_policy: Policy,
    /// Largest violation of the optimality equation at `(gain, bias)`.
    pub residual: T,
    /// Tolerance the solution was requested at.
    pub tol: T,
    pub sweeps: usize,
}

/// `r(s,a) − ρ/λ(s,a) + p(·|s,a)·h − h(s)`.
#[inline]
pub(crate) fn bellman_term<T: Scalar>(model: &CtmdpModel<T>, gain: T, bias: &[T], s: usize, a: usize) -> T {
    model.reward(s, a) - gain / model.rate(s, a) + dot(model.transition(s, a), bias) - bias[s]
}

/// Max-action Bellman value at `s` with lowest-index tie-breaking.
fn best_action<T: Scalar>(model: &CtmdpModel<T>, gain: T, bias: &[T], s: usize) -> (usize, T) {
    let mut best = (0, bellman_term(model, gain, bias, s, 0));
    for a in 1..model.num_actions() {
        let v = bellman_term(model, gain, bias, s, a);
        if v > best.1 {
            best = (a, v);
        }
    }
    best
}

/// Largest violation of the optimality equation, `max_s |max_a {…}|`.
pub fn optimality_residual<T: Scalar>(model: &CtmdpModel<T>, gain: T, bias: &[T]) -> T {
    (0..model.num_states())
        .map(|s| best_action(model, gain, bias, s).1.abs())
        .fold(T::zero(), T::max)
}

/// Solves the average-reward optimality equation to residual `tol`.
pub fn solve_average_reward<T: Scalar>(model: &CtmdpModel<T>, tol: T) -> Result<AverageRewardSolution<T>> {
    solve_average_reward_capped(model, tol, MAX_SWEEPS)
}

pub(crate) fn solve_average_reward_capped<T: Scalar>(
    model: &CtmdpModel<T>,
    tol: T,
    max_sweeps: usize,
) -> Result<AverageRewardSolution<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let alpha = T::lit(APERIODICITY_MIX);
    let mdp = uniformize(model).mixed(alpha)?;
    let big = mdp.uniformization_rate();
    let n = model.num_states();
    let target = effective_tol(tol);
    // Half the span bounds the discrete residual; dividing by α and multiplying
    // by Λ/λ_min converts it to the continuous-time equation.
    let mut stop = (target * alpha * model.lambda_min() / big).max(T::tolerance_floor());

    let mut u = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut diff = vec![T::zero(); n];
    let mut last_span = T::infinity();
    for sweep in 1..=max_sweeps {
        for s in 0..n {
            next[s] = (0..model.num_actions())
                .map(|a| mdp.reward_check(s, a) + dot(mdp.transition_check(s, a), &u))
                .fold(T::neg_infinity(), T::max);
            diff[s] = next[s] - u[s];
        }
        last_span = span(&diff);
        if last_span < stop {
            let (lo, hi) = min_max(&diff);
            let gain = big * (lo + hi) / (T::lit(2.0) * alpha);
            let floor = u.iter().copied().fold(T::infinity(), T::min);
            let bias: Vec<T> = u.iter().map(|&x| x - floor).collect();
            let residual = optimality_residual(model, gain, &bias);
            if residual <= target {
                let greedy = (0..n).map(|s| best_action(model, gain, &bias, s).0).collect();
                return Ok(AverageRewardSolution {
                    gain,
                    bias,
                    greedy_policy: Policy::new(greedy, model.num_actions())?,
                    residual,
                    tol,
                    sweeps: sweep,
                });
            }
            if stop <= T::tolerance_floor() {
                return Err(Error::IterationLimitExceeded { sweeps: sweep, span: last_span.as_f64() });
            }
            stop = (stop / T::lit(4.0)).max(T::tolerance_floor());
        }
        let anchor = next[0];
        for s in 0..n {
            u[s] = next[s] - anchor;
        }
    }
    Err(Error::IterationLimitExceeded { sweeps: max_sweeps, span: last_span.as_f64() })
}

/// Stationary distribution of the embedded jump chain under `policy`.
pub fn stationary_distribution<T: Scalar>(model: &CtmdpModel<T>, policy: &Policy, tol: T) -> Result<Vec<T>> {
    let n = model.num_states();
    if policy.len() != n || policy.actions().iter().any(|&a| a >= model.num_actions()) {
        return Err(Error::InvalidArgument("policy does not match the model".into()));
    }
    if !strongly_connected(n, |s| model.successors(s, policy.action(s))) {
        return Err(Error::SingularChain);
    }
    // Rows 0..n-1 of (Pᵀ − I) μ = 0 plus the normalization Σ μ = 1 in the last row.
    let mut m = vec![T::zero(); n * n];
    for s in 0..n {
        for (j, &p) in model.transition(s, policy.action(s)).iter().enumerate() {
            if j + 1 < n {
                m[j * n + s] = m[j * n + s] + p;
            }
        }
        if s + 1 < n {
            m[s * n + s] = m[s * n + s] - T::one();
        }
        m[(n - 1) * n + s] = T::one();
    }
    let mut rhs = vec![T::zero(); n];
    rhs[n - 1] = T::one();
    let mu = solve_dense(m, rhs, T::tolerance_floor()).ok_or(Error::SingularChain)?;
    let check_tol = effective_tol(tol).max(T::simplex_tolerance() * T::from_count(n as u64));
    let mut worst = T::zero();
    for j in 0..n {
        let inflow: T = (0..n).map(|s| mu[s] * model.transition(s, policy.action(s))[j]).sum();
        worst = worst.max((inflow - mu[j]).abs());
    }
    if worst > check_tol || mu.iter().any(|&x| x < -check_tol) {
        return Err(Error::SingularChain);
    }
    Ok(mu.into_iter().map(|x| x.max(T::zero())).collect())
}

/// Long-run reward per unit time of a fixed policy (renewal-reward ratio over the
/// embedded chain's stationary distribution).
pub fn policy_gain<T: Scalar>(model: &CtmdpModel<T>, policy: &Policy, tol: T) -> Result<T> {
    let mu = stationary_distribution(model, policy, tol)?;
    let (mut reward, mut time) = (T::zero(), T::zero());
    for (s, &m) in mu.iter().enumerate() {
        let a = policy.action(s);
        reward = reward + m * model.reward(s, a);
        time = time + m / model.rate(s, a);
    }
    Ok(reward / time)
}

/// Suboptimality gaps and related instance quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GapQuantities<T> {
    /// `φ*(s, a)`; exactly zero on the optimal action set.
    pub phi: Vec<Vec<T>>,
    /// `O(s)`: actions with `φ*(s, a) ≤ 10·tol`.
    pub optimal_actions: Vec<Vec<usize>>,
    /// Gain gap between the best and the second-best policy; `None` when every
    /// policy attains the optimal gain.
    pub gap_g: Option<T>,
    /// `H = max h* − min h*`.
    pub bias_span: T,
    pub diameter: Option<T>,
}

/// Computes `φ*`, the policy gain gap `g` (by enumeration) and the bias span.
pub fn compute_gaps<T: Scalar>(model: &CtmdpModel<T>, solution: &AverageRewardSolution<T>) -> Result<GapQuantities<T>> {
    let required = T::lit(1e-8).max(T::epsilon().sqrt());
    if !(solution.residual <= required) {
        return Err(Error::InvalidArgument(format!(
            "solution residual {} exceeds {required}; solve at a tighter tolerance",
            solution.residual
        )));
    }
    let (n, na) = (model.num_states(), model.num_actions());
    let optimal_cut = T::lit(OPTIMAL_SET_FACTOR) * effective_tol(solution.tol);
    let mut phi = vec![vec![T::zero(); na]; n];
    let mut optimal_actions = vec![Vec::new(); n];
    for s in 0..n {
        for a in 0..na {
            let deficit = -bellman_term(model, solution.gain, &solution.bias, s, a);
            if deficit <= optimal_cut {
                optimal_actions[s].push(a);
            } else {
                phi[s][a] = deficit;
            }
        }
    }

    let gain_tol = effective_tol(solution.tol);
    let mut gains = Vec::new();
    for policy in Policy::enumerate(n, na)? {
        gains.push(policy_gain(model, &policy, gain_tol)?);
    }
    let best = gains.iter().copied().fold(T::neg_infinity(), T::max);
    let tie = T::lit(1e-9).max(T::tolerance_floor()) * model.lambda_max().max(T::one());
    let second = gains.iter().copied().filter(|&g| g < best - tie).fold(T::neg_infinity(), T::max);
    let gap_g = second.is_finite().then(|| best - second);

    Ok(GapQuantities { phi, optimal_actions, gap_g, bias_span: span(&solution.bias), diameter: None })
}

/// `D(M)`: the worst pair of states' minimal expected travel time.
pub fn diameter<T: Scalar>(model: &CtmdpModel<T>, tol: T) -> Result<T> {
    let mut worst = T::zero();
    for target in 0..model.num_states() {
        let times = min_hitting_times(model, target, tol)?;
        worst = worst.max(times.into_iter().fold(T::zero(), T::max));
    }
    Ok(worst)
}

/// Minimal expected time to reach `target` from each state.
///
/// Value iteration on `T(s) = min_a {1/λ + Σ_{j≠target} p(j) T(j)}` to `tol`,
/// followed by exact policy evaluation / improvement rounds starting from the
/// greedy policy.
pub fn min_hitting_times<T: Scalar>(model: &CtmdpModel<T>, target: usize, tol: T) -> Result<Vec<T>> {
    let (n, na) = (model.num_states(), model.num_actions());
    if target >= n {
        return Err(Error::InvalidArgument(format!("target {target} out of range")));
    }
    let q = |times: &[T], s: usize, a: usize| {
        let cont: T = model
            .transition(s, a)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != target)
            .map(|(j, &p)| p * times[j])
            .sum();
        T::one() / model.rate(s, a) + cont
    };
    let greedy = |times: &[T], s: usize| {
        (1..na).fold((0, q(times, s, 0)), |best, a| {
            let v = q(times, s, a);
            if v < best.1 { (a, v) } else { best }
        })
    };

    let tol = effective_tol(tol);
    let mut times = vec![T::zero(); n];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let next: Vec<T> = (0..n).map(|s| if s == target { T::zero() } else { greedy(&times, s).1 }).collect();
        let change = next.iter().zip(&times).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
        times = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationLimitExceeded { sweeps: MAX_SWEEPS, span: f64::NAN });
    }

    for _ in 0..n * na + 1 {
        let policy: Vec<usize> = (0..n).map(|s| greedy(&times, s).0).collect();
        let Some(exact) = evaluate_hitting_policy(model, target, &policy) else { break };
        let improved = exact.iter().zip(&times).any(|(e, t)| *e < *t - tol);
        let stable = (0..n).all(|s| s == target || greedy(&exact, s).1 >= exact[s] - tol);
        times = exact;
        if stable || !improved {
            break;
        }
    }
    Ok(times)
}

fn evaluate_hitting_policy<T: Scalar>(model: &CtmdpModel<T>, target: usize, policy: &[usize]) -> Option<Vec<T>> {
    let n = model.num_states();
    let mut m = vec![T::zero(); n * n];
    let mut rhs = vec![T::zero(); n];
    for s in 0..n {
        m[s * n + s] = T::one();
        if s == target {
            continue;
        }
        let a = policy[s];
        rhs[s] = T::one() / model.rate(s, a);
        for (j, &p) in model.transition(s, a).iter().enumerate() {
            if j != target {
                m[s * n + j] = m[s * n + j] - p;
            }
        }
    }
    let x = solve_dense(m, rhs, T::tolerance_floor())?;
    x.iter().all(|v| v.is_finite() && *v >= T::zero()).then_some(x)
}
