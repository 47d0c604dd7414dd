//! Tabular CTMDP instances, deterministic stationary policies, and model validation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::strongly_connected;
use crate::scalar::Scalar;

/// Largest `A^S` for which policies are enumerated exhaustively.
pub const POLICY_ENUMERATION_LIMIT: usize = 4096;

/// A finite continuous-time MDP: after action `a` in state `s` the process
/// collects `r(s, a)`, holds for an `Exp(λ(s, a))` time, then jumps by `p(·|s, a)`.
///
/// Storage is flat and row-major over `(state, action[, next_state])`. The
/// constructor only checks shapes and finiteness; use [`validate_model`] for the
/// modelling assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile<T>", try_from = "ModelFile<T>", bound = "T: Scalar")]
pub struct CtmdpModel<T> {
    num_states: usize,
    num_actions: usize,
    lambda_min: T,
    lambda_max: T,
    reward: Vec<T>,
    rate: Vec<T>,
    transition: Vec<T>,
    support: Vec<Vec<usize>>,
}

/// On-disk JSON layout of a model. `support` defaults to the positivity
/// pattern of `transition`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelFile<T> {
    pub num_states: usize,
    pub num_actions: usize,
    pub lambda_min: T,
    pub lambda_max: T,
    pub reward: Vec<Vec<T>>,
    pub rate: Vec<Vec<T>>,
    pub transition: Vec<Vec<Vec<T>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<Vec<Vec<usize>>>>,
}

impl<T: Scalar> CtmdpModel<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        lambda_min: T,
        lambda_max: T,
        reward: Vec<Vec<T>>,
        rate: Vec<Vec<T>>,
        transition: Vec<Vec<Vec<T>>>,
        support: Option<Vec<Vec<Vec<usize>>>>,
    ) -> Result<Self> {
        ModelFile { num_states, num_actions, lambda_min, lambda_max, reward, rate, transition, support }
            .try_into()
    }

    /// Builds a model from flat row-major buffers; support is the positivity pattern.
    pub(crate) fn from_flat(
        num_states: usize,
        num_actions: usize,
        lambda_min: T,
        lambda_max: T,
        reward: Vec<T>,
        rate: Vec<T>,
        transition: Vec<T>,
    ) -> Self {
        debug_assert_eq!(reward.len(), num_states * num_actions);
        debug_assert_eq!(rate.len(), num_states * num_actions);
        debug_assert_eq!(transition.len(), num_states * num_actions * num_states);
        let support = transition
            .chunks(num_states)
            .map(|row| positive_support(row))
            .collect();
        Self { num_states, num_actions, lambda_min, lambda_max, reward, rate, transition, support }
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

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> T {
        self.reward[s * self.num_actions + a]
    }

    #[inline]
    pub fn rate(&self, s: usize, a: usize) -> T {
        self.rate[s * self.num_actions + a]
    }

    /// `p(·|s, a)` as a slice of length `S`.
    #[inline]
    pub fn transition(&self, s: usize, a: usize) -> &[T] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    /// The declared support `S⁺(s, a)`, sorted ascending.
    pub fn support(&self, s: usize, a: usize) -> &[usize] {
        &self.support[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[T] {
        &self.reward
    }

    pub fn rates(&self) -> &[T] {
        &self.rate
    }

    /// Number of deterministic stationary policies, `A^S`, or `None` on overflow.
    pub fn policy_count(&self) -> Option<usize> {
        self.num_actions.checked_pow(u32::try_from(self.num_states).ok()?)
    }

    /// Same model with every rate (and both rate bounds) multiplied by `factor`.
    pub fn with_rates_scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.rate.iter_mut().for_each(|x| *x = *x * factor);
        out.lambda_min = out.lambda_min * factor;
        out.lambda_max = out.lambda_max * factor;
        out
    }

    /// Same model with state `s` renamed to `perm[s]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_states;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("relabeling must be a permutation of the states".into()));
        }
        let na = self.num_actions;
        let mut reward = vec![T::zero(); n * na];
        let mut rate = vec![T::zero(); n * na];
        let mut transition = vec![T::zero(); n * na * n];
        let mut support = vec![Vec::new(); n * na];
        for s in 0..n {
            for a in 0..na {
                let to = perm[s] * na + a;
                reward[to] = self.reward(s, a);
                rate[to] = self.rate(s, a);
                for (j, &p) in self.transition(s, a).iter().enumerate() {
                    transition[to * n + perm[j]] = p;
                }
                let mut sup: Vec<usize> = self.support(s, a).iter().map(|&j| perm[j]).collect();
                sup.sort_unstable();
                support[to] = sup;
            }
        }
        Ok(Self { reward, rate, transition, support, ..self.clone() })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }

    /// Successor states with positive probability under `a` at `s`.
    pub(crate) fn successors(&self, s: usize, a: usize) -> Vec<usize> {
        positive_support(self.transition(s, a))
    }
}

fn positive_support<T: Scalar>(row: &[T]) -> Vec<usize> {
    row.iter().enumerate().filter(|(_, &p)| p > T::zero()).map(|(j, _)| j).collect()
}

impl<T: Scalar> TryFrom<ModelFile<T>> for CtmdpModel<T> {
    type Error = Error;

    fn try_from(f: ModelFile<T>) -> Result<Self> {
        let (n, na) = (f.num_states, f.num_actions);
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if n == 0 || na == 0 {
            return bad("num_states and num_actions must be positive".into());
        }
        if f.reward.len() != n || f.reward.iter().any(|row| row.len() != na) {
            return bad(format!("reward must be a {n}x{na} array"));
        }
        if f.rate.len() != n || f.rate.iter().any(|row| row.len() != na) {
            return bad(format!("rate must be a {n}x{na} array"));
        }
        if f.transition.len() != n
            || f.transition.iter().any(|row| row.len() != na || row.iter().any(|p| p.len() != n))
        {
            return bad(format!("transition must be a {n}x{na}x{n} array"));
        }
        let reward: Vec<T> = f.reward.into_iter().flatten().collect();
        let rate: Vec<T> = f.rate.into_iter().flatten().collect();
        let transition: Vec<T> = f.transition.into_iter().flatten().flatten().collect();
        let finite = |xs: &[T]| xs.iter().all(|x| x.is_finite());
        if !finite(&reward) || !finite(&rate) || !finite(&transition) {
            return bad("all entries must be finite".into());
        }
        if !(f.lambda_min.is_finite() && f.lambda_max.is_finite()) {
            return bad("rate bounds must be finite".into());
        }
        let mut model = Self::from_flat(n, na, f.lambda_min, f.lambda_max, reward, rate, transition);
        if let Some(support) = f.support {
            if support.len() != n || support.iter().any(|row| row.len() != na) {
                return bad(format!("support must be a {n}x{na} array of index lists"));
            }
            let mut flat = Vec::with_capacity(n * na);
            for mut set in support.into_iter().flatten() {
                if set.iter().any(|&j| j >= n) {
                    return bad("support index out of range".into());
                }
                set.sort_unstable();
                set.dedup();
                flat.push(set);
            }
            model.support = flat;
        }
        Ok(model)
    }
}

impl<T: Scalar> From<CtmdpModel<T>> for ModelFile<T> {
    fn from(m: CtmdpModel<T>) -> Self {
        let (n, na) = (m.num_states, m.num_actions);
        let reward = m.reward.chunks(na).map(<[T]>::to_vec).collect();
        let rate = m.rate.chunks(na).map(<[T]>::to_vec).collect();
        let transition = m
            .transition
            .chunks(na * n)
            .map(|per_state| per_state.chunks(n).map(<[T]>::to_vec).collect())
            .collect();
        let support = Some(m.support.chunks(na).map(<[Vec<usize>]>::to_vec).collect());
        ModelFile {
            num_states: n,
            num_actions: na,
            lambda_min: m.lambda_min,
            lambda_max: m.lambda_max,
            reward,
            rate,
            transition,
            support,
        }
    }
}

/// A deterministic stationary policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::InvalidArgument(format!("action {bad} out of range 0..{num_actions}")));
        }
        Ok(Self(actions))
    }

    pub fn constant(num_states: usize, action: usize) -> Self {
        Self(vec![action; num_states])
    }

    #[inline]
    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All `A^S` deterministic policies in lexicographic order (state 0 slowest).
    pub fn enumerate(num_states: usize, num_actions: usize) -> Result<impl Iterator<Item = Policy>> {
        let size = u32::try_from(num_states)
            .ok()
            .and_then(|s| num_actions.checked_pow(s))
            .filter(|&n| n <= POLICY_ENUMERATION_LIMIT)
            .ok_or(Error::PolicySpaceTooLarge {
                size: (num_actions as f64).powi(num_states as i32),
                limit: POLICY_ENUMERATION_LIMIT,
            })?;
        Ok((0..size).map(move |mut index| {
            let mut actions = vec![0; num_states];
            for slot in actions.iter_mut().rev() {
                *slot = index % num_actions;
                index /= num_actions;
            }
            Policy(actions)
        }))
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// How irreducibility of every policy's embedded chain was checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrreducibilityCheck {
    /// Every deterministic policy was enumerated.
    Exhaustive,
    /// Only "every state reachable from every state" was checked.
    Communicating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    RateBounds { lambda_min: f64, lambda_max: f64 },
    RewardOutOfRange { state: usize, action: usize, value: f64 },
    RateOutOfRange { state: usize, action: usize, value: f64 },
    NegativeProbability { state: usize, action: usize, next_state: usize, value: f64 },
    TransitionSum { state: usize, action: usize, sum: f64 },
    SupportMismatch { state: usize, action: usize, next_state: usize, probability: f64 },
    Reducible { policy: Policy },
    NotCommunicating,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RateBounds { lambda_min, lambda_max } => {
                write!(f, "rate bounds need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]")
            }
            Violation::RewardOutOfRange { state, action, value } => {
                write!(f, "reward r({state},{action}) = {value} outside [0, 1]")
            }
            Violation::RateOutOfRange { state, action, value } => {
                write!(f, "rate lambda({state},{action}) = {value} outside [lambda_min, lambda_max]")
            }
            Violation::NegativeProbability { state, action, next_state, value } => {
                write!(f, "p({next_state}|{state},{action}) = {value} is negative")
            }
            Violation::TransitionSum { state, action, sum } => {
                write!(f, "p(.|{state},{action}) sums to {sum}")
            }
            Violation::SupportMismatch { state, action, next_state, probability } => write!(
                f,
                "support mismatch at ({state},{action}): p({next_state}) = {probability} disagrees with declared support"
            ),
            Violation::Reducible { policy } => write!(f, "embedded chain of policy {policy} is not irreducible"),
            Violation::NotCommunicating => write!(f, "some state cannot be reached from another under any actions"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub irreducibility_check: IrreducibilityCheck,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// `Ok(())` when valid, otherwise an [`Error::InvalidModel`] listing the violations.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        Err(Error::InvalidModel(msgs.join("; ")))
    }
}

/// Checks the modelling assumptions: probability vectors, declared supports,
/// reward and rate ranges, and irreducibility of every policy's embedded chain.
pub fn validate_model<T: Scalar>(model: &CtmdpModel<T>) -> ValidationReport {
    let mut violations = Vec::new();
    let (lmin, lmax) = (model.lambda_min, model.lambda_max);
    if !(lmin > T::zero() && lmax >= lmin) {
        violations.push(Violation::RateBounds { lambda_min: lmin.as_f64(), lambda_max: lmax.as_f64() });
    }
    let sum_tol = T::simplex_tolerance();
    for s in 0..model.num_states {
        for a in 0..model.num_actions {
            let r = model.reward(s, a);
            if !(T::zero()..=T::one()).contains(&r) {
                violations.push(Violation::RewardOutOfRange { state: s, action: a, value: r.as_f64() });
            }
            let rate = model.rate(s, a);
            if !(rate >= lmin && rate <= lmax && rate > T::zero()) {
                violations.push(Violation::RateOutOfRange { state: s, action: a, value: rate.as_f64() });
            }
            let row = model.transition(s, a);
            let support = model.support(s, a);
            for (j, &p) in row.iter().enumerate() {
                if p < T::zero() {
                    violations.push(Violation::NegativeProbability {
                        state: s,
                        action: a,
                        next_state: j,
                        value: p.as_f64(),
                    });
                }
                if (p > T::zero()) != support.binary_search(&j).is_ok() {
                    violations.push(Violation::SupportMismatch {
                        state: s,
                        action: a,
                        next_state: j,
                        probability: p.as_f64(),
                    });
                }
            }
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > sum_tol {
                violations.push(Violation::TransitionSum { state: s, action: a, sum: sum.as_f64() });
            }
        }
    }

    let mut warnings = Vec::new();
    let n = model.num_states;
    let irreducibility_check = match Policy::enumerate(n, model.num_actions) {
        Ok(policies) => {
            for policy in policies {
                if !strongly_connected(n, |s| model.successors(s, policy.action(s))) {
                    violations.push(Violation::Reducible { policy });
                }
            }
            IrreducibilityCheck::Exhaustive
        }
        Err(_) => {
            warnings.push(format!(
                "A^S exceeds {POLICY_ENUMERATION_LIMIT}; checked the weaker communicating property only"
            ));
            let union = |s: usize| {
                let mut next: Vec<usize> = (0..model.num_actions).flat_map(|a| model.successors(s, a)).collect();
                next.sort_unstable();
                next.dedup();
                next
            };
            if !strongly_connected(n, union) {
                violations.push(Violation::NotCommunicating);
            }
            IrreducibilityCheck::Communicating
        }
    };
    ValidationReport { violations, irreducibility_check, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state() -> CtmdpModel<f64> {
        CtmdpModel::new(1, 1, 0.5, 2.0, vec![vec![0.3]], vec![vec![1.0]], vec![vec![vec![1.0]]], None).unwrap()
    }

    #[test]
    fn single_state_is_valid() {
        let report = validate_model(&single_state());
        assert!(report.is_valid(), "{report:?}");
        assert_eq!(report.irreducibility_check, IrreducibilityCheck::Exhaustive);
    }

    #[test]
    fn declared_support_mismatch_is_reported() {
        let m = CtmdpModel::new(
            2,
            1,
            0.5,
            2.0,
            vec![vec![0.5], vec![0.5]],
            vec![vec![1.0], vec![1.0]],
            vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]],
            Some(vec![vec![vec![1]], vec![vec![0]]]),
        )
        .unwrap();
        let report = validate_model(&m);
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::SupportMismatch { state: 0, action: 0, next_state: 0, .. }
        )));
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::SupportMismatch { state: 0, action: 0, next_state: 1, .. }
        )));
    }

    #[test]
    fn self_looping_policy_is_reducible() {
        // action 0 self-loops at both states; action 1 swaps
        let m = CtmdpModel::new(
            2,
            2,
            1.0,
            1.0,
            vec![vec![0.5, 0.5]; 2],
            vec![vec![1.0, 1.0]; 2],
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
            None,
        )
        .unwrap();
        let report = validate_model(&m);
        // Brute-force oracle over all four policies: only those with a self-loop at some state fail.
        let expected: Vec<Policy> = Policy::enumerate(2, 2)
            .unwrap()
            .filter(|p| p.actions().iter().any(|&a| a == 0))
            .collect();
        let reducible: Vec<Policy> = report
            .violations
            .iter()
            .filter_map(|v| match v {
                Violation::Reducible { policy } => Some(policy.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(reducible, expected);
        assert!(reducible.contains(&Policy::constant(2, 0)));
    }

    #[test]
    fn ranges_and_sums_are_checked() {
        let m = CtmdpModel::new(1, 1, 0.5, 2.0, vec![vec![1.5]], vec![vec![3.0]], vec![vec![vec![0.9]]], None)
            .unwrap();
        let report = validate_model(&m);
        assert_eq!(report.violations.len(), 3, "{report:?}");
    }

    #[test]
    fn shape_errors() {
        let err = CtmdpModel::<f64>::new(1, 1, 0.5, 2.0, vec![vec![0.5, 0.5]], vec![vec![1.0]], vec![vec![vec![1.0]]], None);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn json_round_trip_keeps_support() {
        let m = single_state();
        let text = m.to_json_string().unwrap();
        assert_eq!(CtmdpModel::<f64>::from_json_str(&text).unwrap(), m);
        let minimal = r#"{"num_states":1,"num_actions":1,"lambda_min":0.5,"lambda_max":2.0,
            "reward":[[0.3]],"rate":[[1.0]],"transition":[[[1.0]]]}"#;
        assert_eq!(CtmdpModel::<f64>::from_json_str(minimal).unwrap(), m);
    }

    #[test]
    fn enumeration_order_and_limit() {
        let all: Vec<Vec<usize>> = Policy::enumerate(2, 3).unwrap().map(|p| p.actions().to_vec()).collect();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[8], vec![2, 2]);
        assert!(Policy::enumerate(13, 2).is_err());
        assert!(Policy::enumerate(12, 2).is_ok());
    }

    #[test]
    fn large_models_use_communicating_check() {
        let n = 13;
        let mut transition = vec![vec![vec![0.0; n]; 2]; n];
        for s in 0..n {
            transition[s][0][(s + 1) % n] = 1.0;
            transition[s][1][s] = 1.0;
        }
        let m = CtmdpModel::new(n, 2, 1.0, 1.0, vec![vec![0.0; 2]; n], vec![vec![1.0; 2]; n], transition, None)
            .unwrap();
        let report = validate_model(&m);
        assert_eq!(report.irreducibility_check, IrreducibilityCheck::Communicating);
        assert!(report.is_valid());
        assert_eq!(report.warnings.len(), 1);
    }
}
