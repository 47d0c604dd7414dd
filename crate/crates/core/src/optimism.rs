//! Extended value iteration over a confidence set.
//!
//! Each sweep picks, per state, the action together with the most favourable
//! transition vector in the L1 ball and the most favourable rate in the
//! plausible interval, on the uniformized scale `λ/λ_max`. The same lazy
//! self-loop mix as the planner keeps the iteration aperiodic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ConfidenceSet;
use crate::model::{CtmdpModel, Policy};
use crate::planning::{APERIODICITY_MIX, MAX_SWEEPS};
use crate::scalar::{dot, min_max, Scalar};

/// Result of extended value iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimisticSolution<T> {
    /// Optimistic model: maximizing transition vector and rate for every pair.
    pub model_tilde: CtmdpModel<T>,
    pub policy_tilde: Policy,
    /// Optimistic gain per unit time.
    pub gain: T,
    pub final_iterate: Vec<T>,
    /// `u − (max u + min u)/2`.
    pub centered_iterate: Vec<T>,
    pub iterations: usize,
    /// Span of the last increment on the unmixed uniformized scale.
    pub achieved_span: T,
}

/// States sorted by decreasing `u`, ties by increasing index.
pub(crate) fn descending_order<T: Scalar>(u: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&i, &j| u[j].partial_cmp(&u[i]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    order
}

/// Maximizes `q·u` over probability vectors `q` with `‖q − p̂‖₁ ≤ radius`.
///
/// Adds `radius/2` to the best state and removes the excess from the worst
/// states first.
pub fn inner_max_transition<T: Scalar>(p_hat: &[T], radius: T, u: &[T]) -> Vec<T> {
    inner_max_transition_sorted(p_hat, radius, &descending_order(u))
}

pub(crate) fn inner_max_transition_sorted<T: Scalar>(p_hat: &[T], radius: T, order: &[usize]) -> Vec<T> {
    let mut q = p_hat.to_vec();
    if order.is_empty() || !(radius > T::zero()) {
        return q;
    }
    let best = order[0];
    q[best] = (p_hat[best] + radius / T::lit(2.0)).min(T::one());
    let mut total: T = q.iter().copied().sum();
    for &j in order[1..].iter().rev() {
        if total <= T::one() {
            break;
        }
        let removed = q[j].min(total - T::one());
        q[j] = q[j] - removed;
        total = total - removed;
    }
    q
}

/// Maximizes the linear objective `coefficient · λ` over `λ ∈ [lo, hi]`;
/// a zero coefficient returns `lo`.
pub fn inner_max_rate<T: Scalar>(coefficient: T, interval: (T, T)) -> Result<T> {
    let (lo, hi) = interval;
    if !(lo <= hi) {
        return Err(Error::EmptyInterval { lo: lo.as_f64(), hi: hi.as_f64() });
    }
    Ok(if coefficient > T::zero() { hi } else { lo })
}

/// Runs extended value iteration from `u ≡ 0` until the span of the increment
/// drops below `epsilon`. `rewards` is row-major over `(state, action)`.
pub fn extended_value_iteration<T: Scalar>(
    conf: &ConfidenceSet<T>,
    rewards: &[T],
    epsilon: T,
) -> Result<OptimisticSolution<T>> {
    let (solution, converged) = extended_value_iteration_capped(conf, rewards, epsilon, MAX_SWEEPS)?;
    if converged {
        Ok(solution)
    } else {
        Err(Error::IterationLimitExceeded { sweeps: solution.iterations, span: solution.achieved_span.as_f64() })
    }
}

/// Like [`extended_value_iteration`] but returns the last sweep's result with
/// `false` instead of failing when the cap is hit.
pub(crate) fn extended_value_iteration_capped<T: Scalar>(
    conf: &ConfidenceSet<T>,
    rewards: &[T],
    epsilon: T,
    max_sweeps: usize,
) -> Result<(OptimisticSolution<T>, bool)> {
    let (n, na) = (conf.num_states(), conf.num_actions());
    if rewards.len() != n * na {
        return Err(Error::InvalidArgument(format!("expected {} rewards, got {}", n * na, rewards.len())));
    }
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let alpha = T::lit(APERIODICITY_MIX);
    let big = conf.lambda_max();

    let mut u = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut increment = vec![T::zero(); n];
    let mut policy = vec![0usize; n];
    let mut q_tilde = vec![T::zero(); n * na * n];
    let mut rate_tilde = vec![T::zero(); n * na];
    let mut sweeps = 0;
    let mut unmixed_span = T::infinity();
    let mut converged = false;

    while sweeps < max_sweeps {
        sweeps += 1;
        let order = descending_order(&u);
        for s in 0..n {
            let mut best: Option<(usize, T)> = None;
            for a in 0..na {
                let pair = s * na + a;
                let q = inner_max_transition_sorted(conf.p_hat(s, a), conf.transition_radius(s, a), &order);
                let coefficient = rewards[pair] + dot(&q, &u) - u[s];
                let rate = inner_max_rate(coefficient, conf.rate_interval(s, a))?;
                let value = alpha * coefficient * rate / big;
                if best.map_or(true, |(_, v)| value > v) {
                    best = Some((a, value));
                }
                q_tilde[pair * n..(pair + 1) * n].copy_from_slice(&q);
                rate_tilde[pair] = rate;
            }
            let (a, value) = best.expect("at least one action");
            policy[s] = a;
            increment[s] = value;
            next[s] = u[s] + value;
        }
        let (lo, hi) = min_max(&increment);
        unmixed_span = (hi - lo) / alpha;
        let anchor = next.iter().copied().fold(T::infinity(), T::min);
        for s in 0..n {
            u[s] = next[s] - anchor;
        }
        if unmixed_span < epsilon {
            converged = true;
            break;
        }
    }

    let (lo, hi) = min_max(&increment);
    let gain = big * (lo + hi) / (T::lit(2.0) * alpha);
    let (ulo, uhi) = min_max(&u);
    let mid = (ulo + uhi) / T::lit(2.0);
    let model_tilde = CtmdpModel::from_flat(
        n,
        na,
        conf.lambda_min(),
        conf.lambda_max(),
        rewards.to_vec(),
        rate_tilde,
        q_tilde,
    );
    Ok((
        OptimisticSolution {
            model_tilde,
            policy_tilde: Policy::new(policy, na)?,
            gain,
            centered_iterate: u.iter().map(|&x| x - mid).collect(),
            final_iterate: u,
            iterations: sweeps,
            achieved_span: unmixed_span,
        },
        converged,
    ))
}
