//! Offline model-based reinforcement learning on cart-pole: a learned
//! dynamics model, blind and informed model rollouts, rollout-based value
//! estimation (MBRO), fitted Q evaluation, NFQ and bootstrapping-free NFQ.

pub mod data;
pub mod env;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod model;
pub mod neural;
pub mod policy;
pub mod qfunction;
pub mod rollout;
pub mod schema;
pub mod seeds;
pub mod valuation;

pub use data::{Dataset, ObservationTuple};
pub use env::{Action, EnvConfig, State};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, Pipeline, Preset};
pub use learner::{Algorithm, LearningRun};
pub use model::{DynamicsModel, QualityTier};
pub use neural::Mlp;
pub use policy::Policy;
pub use qfunction::{GreedyPolicy, QFunction};
pub use rollout::Rollout;
pub use valuation::ValueReport;
