//! Random instance families for experiments and tests.

use rand::distributions::{Distribution, Open01, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_model, CtmdpModel};

/// Attempts before giving up on drawing a valid instance.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Each action moves one step up or down (clipped at the ends).
    BirthDeath,
    /// Fully supported random transition rows.
    RandomDense,
    /// One state, `A` arms.
    SingleStateBandit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub num_states: usize,
    pub num_actions: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    #[serde(default = "unit_interval")]
    pub reward_range: (f64, f64),
    /// Defaults to `[lambda_min, lambda_max]`.
    #[serde(default)]
    pub rate_range: Option<(f64, f64)>,
    /// Fixed bandit arms; random when absent.
    #[serde(default)]
    pub rewards: Option<Vec<f64>>,
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn unit_interval() -> (f64, f64) {
    (0.0, 1.0)
}

impl GeneratorSpec {
    pub fn new(family: Family, num_states: usize, num_actions: usize, lambda_min: f64, lambda_max: f64, seed: u64) -> Self {
        Self {
            family,
            num_states,
            num_actions,
            lambda_min,
            lambda_max,
            reward_range: unit_interval(),
            rate_range: None,
            rewards: None,
            rates: None,
            seed,
        }
    }

    /// The two-armed bandit `r = (1, 0.5)`, `λ = (1, 1)` on `[0.5, 3]`.
    pub fn canonical_bandit() -> Self {
        Self {
            rewards: Some(vec![1.0, 0.5]),
            rates: Some(vec![1.0, 1.0]),
            ..Self::new(Family::SingleStateBandit, 1, 2, 0.5, 3.0, 0)
        }
    }

    fn check(&self) -> Result<(f64, f64)> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidArgument("need at least one state and one action".into()));
        }
        if self.family == Family::SingleStateBandit && self.num_states != 1 {
            return Err(Error::InvalidArgument("single_state_bandit has exactly one state".into()));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max && self.lambda_max.is_finite()) {
            return Err(Error::InvalidArgument("need 0 < lambda_min <= lambda_max".into()));
        }
        let (rlo, rhi) = self.reward_range;
        if !(0.0 <= rlo && rlo <= rhi && rhi <= 1.0) {
            return Err(Error::InvalidArgument("reward range must lie within [0, 1]".into()));
        }
        let rates = self.rate_range.unwrap_or((self.lambda_min, self.lambda_max));
        if !(self.lambda_min <= rates.0 && rates.0 <= rates.1 && rates.1 <= self.lambda_max) {
            return Err(Error::InvalidArgument("rate range must lie within [lambda_min, lambda_max]".into()));
        }
        for (name, fixed) in [("rewards", &self.rewards), ("rates", &self.rates)] {
            if let Some(v) = fixed {
                if self.family != Family::SingleStateBandit {
                    return Err(Error::InvalidArgument(format!("fixed {name} are only supported for bandits")));
                }
                if v.len() != self.num_actions {
                    return Err(Error::InvalidArgument(format!("{name} needs one entry per action")));
                }
            }
        }
        Ok(rates)
    }
}

/// Draws a model from `spec`, redrawing (same generator stream) until it
/// passes validation.
pub fn generate(spec: &GeneratorSpec) -> Result<CtmdpModel<f64>> {
    let rate_range = spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut last = None;
    for _ in 0..MAX_ATTEMPTS {
        let model = draw(spec, rate_range, &mut rng)?;
        let report = validate_model(&model);
        if report.is_valid() {
            return Ok(model);
        }
        last = Some(report);
    }
    Err(Error::InvalidModel(format!(
        "no valid instance after {MAX_ATTEMPTS} attempts: {}",
        last.map(|r| r.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")).unwrap_or_default()
    )))
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        Uniform::new_inclusive(lo, hi).sample(rng)
    } else {
        lo
    }
}

fn draw(spec: &GeneratorSpec, rate_range: (f64, f64), rng: &mut ChaCha8Rng) -> Result<CtmdpModel<f64>> {
    let (n, na) = (spec.num_states, spec.num_actions);
    let mut reward = vec![vec![0.0; na]; n];
    let mut rate = vec![vec![0.0; na]; n];
    let mut transition = vec![vec![vec![0.0; n]; na]; n];
    for s in 0..n {
        for a in 0..na {
            reward[s][a] = match &spec.rewards {
                Some(r) => r[a],
                None => uniform(rng, spec.reward_range),
            };
            rate[s][a] = match &spec.rates {
                Some(r) => r[a],
                None => uniform(rng, rate_range),
            };
            let row = &mut transition[s][a];
            match spec.family {
                Family::SingleStateBandit => row[0] = 1.0,
                Family::RandomDense => {
                    // Normalized exponentials: a flat Dirichlet draw.
                    for p in row.iter_mut() {
                        let u: f64 = rng.sample(Open01);
                        *p = -u.ln();
                    }
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= total);
                }
                Family::BirthDeath => {
                    if n == 1 {
                        row[0] = 1.0;
                    } else if s == 0 {
                        row[1] = 1.0;
                    } else if s == n - 1 {
                        row[n - 2] = 1.0;
                    } else {
                        let up = uniform(rng, (0.1, 0.9));
                        row[s + 1] = up;
                        row[s - 1] = 1.0 - up;
                    }
                }
            }
        }
    }
    CtmdpModel::new(n, na, spec.lambda_min, spec.lambda_max, reward, rate, transition, None)
}
