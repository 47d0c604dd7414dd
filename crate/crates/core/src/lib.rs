//! Tabular continuous-time MDP laboratory: average-reward planning by
//! uniformization, the CT-UCRL learner, an event-driven simulator with
//! continuous-time regret, and instance-dependent regret constants.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`.

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod generator;
pub mod learner;
pub mod linalg;
pub mod lower_bound;
pub mod model;
pub mod optimism;
pub mod planning;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use estimators::{build_confidence_set, ConfidenceSet, PairStatistics, StatisticsTable};
pub use experiment::{run_experiment, write_outputs, AgentSpec, DeltaPolicy, ExperimentConfig, ExperimentResult};
pub use generator::{generate, Family, GeneratorSpec};
pub use learner::{Agent, CtUcrl, FixedPolicy, LearnerSpec, UniformRandom};
pub use lower_bound::{compute_c, compute_k, kl_exponential, kl_transition, InstanceConstants};
pub use model::{validate_model, CtmdpModel, Policy, ValidationReport};
pub use optimism::{extended_value_iteration, OptimisticSolution};
pub use planning::{compute_gaps, diameter, policy_gain, solve_average_reward, AverageRewardSolution, GapQuantities};
pub use scalar::Scalar;
pub use sim::{simulate, Horizon, RegretRecord, SimulationConfig, Trajectory};

pub type Model = CtmdpModel<f64>;
pub type Solution = AverageRewardSolution<f64>;
pub type Gaps = GapQuantities<f64>;
pub type Learner = CtUcrl<f64>;
pub type Confidence = ConfidenceSet<f64>;
pub type Constants = InstanceConstants<f64>;
