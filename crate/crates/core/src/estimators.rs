//! Sufficient statistics for the optimistic learner: transition counts, the
//! truncated empirical mean of holding times, and the confidence radii built
//! from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Counts and holding-time sums for one state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PairStatistics<T> {
    pub visit_count: u64,
    pub transition_counts: Vec<u64>,
    /// Sum of the samples that fell under their truncation threshold.
    pub truncated_sum: T,
    /// Sum of all samples.
    pub raw_sum: T,
    /// Number of holding-time samples recorded so far.
    pub sample_index: u64,
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if delta > T::zero() && delta < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidDelta(delta.as_f64()))
    }
}

/// Truncation level for the `index`-th (1-based) sample of a pair:
/// `sqrt(2 i / (λ_min² log(1/δ)))`.
pub fn truncation_threshold<T: Scalar>(index: u64, delta: T, lambda_min: T) -> Result<T> {
    check_delta(delta)?;
    let denom = lambda_min * lambda_min * (T::one() / delta).ln();
    Ok((T::lit(2.0) * T::from_count(index) / denom).sqrt())
}

impl<T: Scalar> PairStatistics<T> {
    pub fn new(num_states: usize) -> Self {
        Self {
            visit_count: 0,
            transition_counts: vec![0; num_states],
            truncated_sum: T::zero(),
            raw_sum: T::zero(),
            sample_index: 0,
        }
    }

    /// Records one transition. Returns whether the holding time was kept by
    /// the truncation rule.
    pub fn record_transition(&mut self, holding_time: T, next_state: usize, delta: T, lambda_min: T) -> Result<bool> {
        check_delta(delta)?;
        if !(holding_time >= T::zero()) || !holding_time.is_finite() {
            return Err(Error::InvalidArgument(format!("holding time must be finite and nonnegative, got {holding_time}")));
        }
        if next_state >= self.transition_counts.len() {
            return Err(Error::InvalidArgument(format!("next state {next_state} out of range")));
        }
        self.sample_index += 1;
        self.visit_count += 1;
        self.transition_counts[next_state] += 1;
        self.raw_sum = self.raw_sum + holding_time;
        let kept = holding_time <= truncation_threshold(self.sample_index, delta, lambda_min)?;
        if kept {
            self.truncated_sum = self.truncated_sum + holding_time;
        }
        Ok(kept)
    }

    /// Truncated empirical mean holding time `m̂ = truncated_sum / N`.
    pub fn truncated_mean(&self) -> Result<T> {
        if self.visit_count == 0 {
            return Err(Error::NoSamples);
        }
        Ok(self.truncated_sum / T::from_count(self.visit_count))
    }
}

/// Statistics for every state-action pair together with the learner's
/// confidence parameter `δ` and known lower rate bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StatisticsTable<T> {
    num_states: usize,
    num_actions: usize,
    delta: T,
    lambda_min: T,
    pairs: Vec<PairStatistics<T>>,
}

impl<T: Scalar> StatisticsTable<T> {
    pub fn new(num_states: usize, num_actions: usize, delta: T, lambda_min: T) -> Result<Self> {
        check_delta(delta)?;
        if !(lambda_min > T::zero()) {
            return Err(Error::NonpositiveRate(lambda_min.as_f64()));
        }
        Ok(Self {
            num_states,
            num_actions,
            delta,
            lambda_min,
            pairs: vec![PairStatistics::new(num_states); num_states * num_actions],
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn lambda_min(&self) -> T {
        self.lambda_min
    }

    pub fn pair(&self, s: usize, a: usize) -> &PairStatistics<T> {
        &self.pairs[s * self.num_actions + a]
    }

    pub fn pair_mut(&mut self, s: usize, a: usize) -> &mut PairStatistics<T> {
        &mut self.pairs[s * self.num_actions + a]
    }

    pub fn visit_counts(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.visit_count).collect()
    }

    pub fn record(&mut self, s: usize, a: usize, holding_time: T, next_state: usize) -> Result<bool> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(Error::InvalidArgument(format!("pair ({s}, {a}) out of range")));
        }
        let (delta, lmin) = (self.delta, self.lambda_min);
        self.pair_mut(s, a).record_transition(holding_time, next_state, delta, lmin)
    }
}

/// L1 radius of the transition confidence ball: `sqrt(14 S log(2 A t_k / δ) / max{1, N})`.
pub fn transition_radius<T: Scalar>(num_states: usize, num_actions: usize, t_k: u64, delta: T, visits: u64) -> T {
    let log_term = (T::lit(2.0) * T::from_count(num_actions as u64) * T::from_count(t_k) / delta).ln();
    (T::lit(14.0) * T::from_count(num_states as u64) * log_term / T::from_count(visits.max(1))).sqrt()
}

/// Radius for the mean holding time: `(4/λ_min) sqrt(14 log(2 A S t_k / δ) / max{1, N})`.
pub fn mean_radius<T: Scalar>(
    num_states: usize,
    num_actions: usize,
    t_k: u64,
    delta: T,
    visits: u64,
    lambda_min: T,
) -> T {
    let sa = T::from_count((num_states * num_actions) as u64);
    let log_term = (T::lit(2.0) * sa * T::from_count(t_k) / delta).ln();
    T::lit(4.0) / lambda_min * (T::lit(14.0) * log_term / T::from_count(visits.max(1))).sqrt()
}

/// Plausible set of transition vectors and rates at the start of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConfidenceSet<T> {
    num_states: usize,
    num_actions: usize,
    lambda_min: T,
    lambda_max: T,
    episode_start: u64,
    delta: T,
    p_hat: Vec<T>,
    radius_p: Vec<T>,
    mean_hat: Vec<T>,
    radius_m: Vec<T>,
    /// Interval for `1/λ̃` after intersecting with `[1/λ_max, 1/λ_min]`.
    inverse_rate_interval: Vec<(T, T)>,
}

impl<T: Scalar> ConfidenceSet<T> {
    /// Assembles a confidence set from per-pair estimates and radii (flat, row-major
    /// over `(state, action[, next_state])`), applying the clamping rule to the
    /// inverse-rate intervals.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        num_states: usize,
        num_actions: usize,
        lambda_min: T,
        lambda_max: T,
        p_hat: Vec<T>,
        radius_p: Vec<T>,
        mean_hat: Vec<T>,
        radius_m: Vec<T>,
        episode_start: u64,
        delta: T,
    ) -> Result<Self> {
        let pairs = num_states * num_actions;
        if p_hat.len() != pairs * num_states || radius_p.len() != pairs || mean_hat.len() != pairs || radius_m.len() != pairs {
            return Err(Error::InvalidArgument("confidence set buffers have inconsistent lengths".into()));
        }
        if !(lambda_min > T::zero() && lambda_max >= lambda_min) {
            return Err(Error::InvalidArgument("rate bounds need 0 < lambda_min <= lambda_max".into()));
        }
        if radius_p.iter().chain(&radius_m).any(|&r| !(r >= T::zero())) {
            return Err(Error::InvalidArgument("radii must be nonnegative".into()));
        }
        let (inv_lo, inv_hi) = (T::one() / lambda_max, T::one() / lambda_min);
        let inverse_rate_interval = mean_hat
            .iter()
            .zip(&radius_m)
            .map(|(&m, &d)| {
                let lo = (m - d).max(inv_lo);
                let hi = (m + d).min(inv_hi);
                if lo > hi { (inv_lo, inv_hi) } else { (lo, hi) }
            })
            .collect();
        Ok(Self {
            num_states,
            num_actions,
            lambda_min,
            lambda_max,
            episode_start,
            delta,
            p_hat,
            radius_p,
            mean_hat,
            radius_m,
            inverse_rate_interval,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn lambda_min(&self) -> T {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> T {
        self.lambda_max
    }

    pub fn episode_start(&self) -> u64 {
        self.episode_start
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn p_hat(&self, s: usize, a: usize) -> &[T] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.p_hat[start..start + self.num_states]
    }

    pub fn transition_radius(&self, s: usize, a: usize) -> T {
        self.radius_p[s * self.num_actions + a]
    }

    pub fn mean_hat(&self, s: usize, a: usize) -> T {
        self.mean_hat[s * self.num_actions + a]
    }

    pub fn mean_radius(&self, s: usize, a: usize) -> T {
        self.radius_m[s * self.num_actions + a]
    }

    /// Plausible interval for the mean holding time `1/λ̃`.
    pub fn inverse_rate_interval(&self, s: usize, a: usize) -> (T, T) {
        self.inverse_rate_interval[s * self.num_actions + a]
    }

    /// Plausible interval for the rate `λ̃`, the inverse of
    /// [`inverse_rate_interval`](Self::inverse_rate_interval) within `[λ_min, λ_max]`.
    pub fn rate_interval(&self, s: usize, a: usize) -> (T, T) {
        let (lo, hi) = self.inverse_rate_interval(s, a);
        let rate_lo = (T::one() / hi).max(self.lambda_min).min(self.lambda_max);
        let rate_hi = (T::one() / lo).min(self.lambda_max).max(rate_lo);
        (rate_lo, rate_hi)
    }

    /// Whether `p` and `rate` satisfy the constraints of pair `(s, a)` up to `slack`.
    pub fn contains(&self, s: usize, a: usize, p: &[T], rate: T, slack: T) -> bool {
        let l1: T = p.iter().zip(self.p_hat(s, a)).map(|(&x, &y)| (x - y).abs()).sum();
        let sum: T = p.iter().copied().sum();
        let (lo, hi) = self.rate_interval(s, a);
        l1 <= self.transition_radius(s, a) + slack
            && (sum - T::one()).abs() <= slack
            && p.iter().all(|&x| x >= -slack)
            && rate >= lo - slack
            && rate <= hi + slack
    }

    /// Same point estimates with every radius set to zero.
    pub fn with_zero_radii(&self) -> Self {
        let pairs = self.radius_p.len();
        Self::from_parts(
            self.num_states,
            self.num_actions,
            self.lambda_min,
            self.lambda_max,
            self.p_hat.clone(),
            vec![T::zero(); pairs],
            self.mean_hat.clone(),
            vec![T::zero(); pairs],
            self.episode_start,
            self.delta,
        )
        .expect("buffers copied from a valid set")
    }
}

/// Builds the episode's confidence set from the statistics collected before `t_k`.
///
/// Unvisited pairs get the point mass on state 0 as `p̂`; their radius is at
/// least 2, which covers the whole simplex.
pub fn build_confidence_set<T: Scalar>(stats: &StatisticsTable<T>, t_k: u64, lambda_max: T) -> Result<ConfidenceSet<T>> {
    if t_k == 0 {
        return Err(Error::InvalidArgument("episode start index must be at least 1".into()));
    }
    let (n, na) = (stats.num_states(), stats.num_actions());
    let (delta, lmin) = (stats.delta(), stats.lambda_min());
    let mut p_hat = Vec::with_capacity(n * na * n);
    let mut radius_p = Vec::with_capacity(n * na);
    let mut mean_hat = Vec::with_capacity(n * na);
    let mut radius_m = Vec::with_capacity(n * na);
    for s in 0..n {
        for a in 0..na {
            let pair = stats.pair(s, a);
            let visits = pair.visit_count;
            if visits == 0 {
                p_hat.push(T::one());
                p_hat.extend(std::iter::repeat(T::zero()).take(n - 1));
            } else {
                let denom = T::from_count(visits);
                p_hat.extend(pair.transition_counts.iter().map(|&c| T::from_count(c) / denom));
            }
            radius_p.push(transition_radius(n, na, t_k, delta, visits));
            mean_hat.push(pair.truncated_sum / T::from_count(visits.max(1)));
            radius_m.push(mean_radius(n, na, t_k, delta, visits, lmin));
        }
    }
    ConfidenceSet::from_parts(n, na, lmin, lambda_max, p_hat, radius_p, mean_hat, radius_m, t_k, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E_INV: f64 = 0.36787944117144233; // e^{-1}

    #[test]
    fn first_sample_under_threshold_is_kept() {
        let thr = truncation_threshold(1, E_INV, 1.0).unwrap();
        assert!((thr - 2f64.sqrt()).abs() < 1e-12);
        let mut p = PairStatistics::<f64>::new(2);
        assert!(p.record_transition(0.5, 1, E_INV, 1.0).unwrap());
        assert_eq!(p.truncated_sum, 0.5);
        assert_eq!(p.transition_counts, vec![0, 1]);
    }

    #[test]
    fn first_sample_over_threshold_is_dropped() {
        let mut p = PairStatistics::<f64>::new(1);
        assert!(!p.record_transition(2.0, 0, E_INV, 1.0).unwrap());
        assert_eq!(p.truncated_sum, 0.0);
        assert_eq!(p.raw_sum, 2.0);
        assert_eq!(p.visit_count, 1);
        assert_eq!(p.truncated_mean().unwrap(), 0.0);
    }

    #[test]
    fn invalid_delta() {
        let mut p = PairStatistics::<f64>::new(1);
        assert!(matches!(p.record_transition(0.1, 0, 1.0, 1.0), Err(Error::InvalidDelta(_))));
        assert!(matches!(p.record_transition(0.1, 0, 0.0, 1.0), Err(Error::InvalidDelta(_))));
        assert!(StatisticsTable::<f64>::new(1, 1, 1.5, 1.0).is_err());
    }

    #[test]
    fn mean_of_kept_samples() {
        let mut p = PairStatistics::<f64>::new(1);
        // thresholds sqrt(2i / (0.25 log 20)) = 1.63, 2.30
        p.record_transition(0.5, 0, 0.05, 0.5).unwrap();
        p.record_transition(1.5, 0, 0.05, 0.5).unwrap();
        assert_eq!(p.truncated_mean().unwrap(), 1.0);
        assert!(matches!(PairStatistics::<f64>::new(1).truncated_mean(), Err(Error::NoSamples)));
    }

    #[test]
    fn unvisited_pair_uses_point_mass_and_wide_radius() {
        let stats = StatisticsTable::<f64>::new(3, 2, 0.05, 1.0).unwrap();
        let conf = build_confidence_set(&stats, 1, 2.0).unwrap();
        assert_eq!(conf.p_hat(1, 1), &[1.0, 0.0, 0.0]);
        assert!(conf.transition_radius(1, 1) >= 2.0);
        assert_eq!(conf.rate_interval(1, 1), (1.0, 2.0));
    }

    #[test]
    fn empty_mean_interval_falls_back_to_full_range() {
        let conf = ConfidenceSet::from_parts(1, 1, 1.0, 2.0, vec![1.0], vec![0.0], vec![0.0], vec![0.1], 5, 0.1).unwrap();
        assert_eq!(conf.inverse_rate_interval(0, 0), (0.5, 1.0));
        assert_eq!(conf.rate_interval(0, 0), (1.0, 2.0));
    }

    #[test]
    fn radius_formulas() {
        let r = transition_radius::<f64>(3, 2, 10, 0.1, 5);
        assert!((r - (14.0 * 3.0 * (2.0 * 2.0 * 10.0 / 0.1f64).ln() / 5.0).sqrt()).abs() < 1e-12);
        let m = mean_radius::<f64>(3, 2, 10, 0.1, 5, 0.5);
        assert!((m - 8.0 * (14.0 * (2.0 * 6.0 * 10.0 / 0.1f64).ln() / 5.0).sqrt()).abs() < 1e-12);
        // four times the visits halves the radius
        let r4 = transition_radius::<f64>(3, 2, 10, 0.1, 20);
        assert!((r / r4 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_frequencies() {
        let mut stats = StatisticsTable::<f64>::new(2, 1, 0.1, 1.0).unwrap();
        for next in [0, 1, 1, 1] {
            stats.record(0, 0, 0.3, next).unwrap();
        }
        let conf = build_confidence_set(&stats, 5, 2.0).unwrap();
        assert_eq!(conf.p_hat(0, 0), &[0.25, 0.75]);
        assert!((conf.mean_hat(0, 0) - 0.3).abs() < 1e-15);
        let exact = conf.with_zero_radii();
        assert_eq!(exact.transition_radius(0, 0), 0.0);
        // 1/0.3 > λ_max so the degenerate interval is empty -> full range
        assert_eq!(exact.rate_interval(0, 0), (1.0, 2.0));
    }

    #[test]
    fn table_serializes() {
        let mut stats = StatisticsTable::<f64>::new(2, 2, 0.1, 1.0).unwrap();
        stats.record(1, 0, 0.123456789012345, 0).unwrap();
        let text = serde_json::to_string(&stats).unwrap();
        let back: StatisticsTable<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, stats);
    }

    proptest! {
        #[test]
        fn radii_monotone(n in 0u64..10_000, extra in 1u64..1000, t in 1u64..100_000, dt in 1u64..1000,
                          delta in 0.001f64..0.999) {
            let base = transition_radius::<f64>(4, 3, t, delta, n);
            prop_assert!(transition_radius::<f64>(4, 3, t, delta, n + extra) <= base);
            prop_assert!(transition_radius::<f64>(4, 3, t + dt, delta, n) >= base);
            let mbase = mean_radius::<f64>(4, 3, t, delta, n, 0.5);
            prop_assert!(mean_radius::<f64>(4, 3, t, delta, n + extra, 0.5) <= mbase);
            prop_assert!(mean_radius::<f64>(4, 3, t + dt, delta, n, 0.5) >= mbase);
        }

        #[test]
        fn truncated_never_exceeds_raw(samples in proptest::collection::vec(0.0f64..20.0, 1..50)) {
            let mut p = PairStatistics::<f64>::new(1);
            for &x in &samples {
                p.record_transition(x, 0, 0.05, 0.5).unwrap();
            }
            prop_assert!(p.truncated_sum <= p.raw_sum + 1e-12);
            prop_assert_eq!(p.visit_count, samples.len() as u64);
        }

        #[test]
        fn rate_interval_never_empty(m in 0.0f64..5.0, d in 0.0f64..3.0, lmin in 0.1f64..2.0, w in 0.0f64..3.0) {
            let lmax = lmin + w;
            let conf = ConfidenceSet::from_parts(1, 1, lmin, lmax, vec![1.0], vec![0.0], vec![m], vec![d], 1, 0.1).unwrap();
            let (lo, hi) = conf.rate_interval(0, 0);
            prop_assert!(lo <= hi);
            prop_assert!(lo >= lmin && hi <= lmax);
        }
    }
}
