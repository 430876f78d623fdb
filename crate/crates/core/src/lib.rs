//! Adversarial attacks on DQN agents that play small image-observation games.
//!
//! The crate trains victims ([`agent`]) on toy environments
//! ([`environments`]), perturbs their observations with gradient and
//! optimisation baselines ([`attacks`]) or a learned perturbation generator
//! ([`pgn`]), and scores the result ([`metrics`], [`harness`]).

pub mod agent;
pub mod attacks;
pub mod environments;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod pgn;

pub use error::{Error, Result};
pub use numerics::{DenseNetwork, Matrix};
pub use agent::{DqnConfig, QNetwork, TrainedAgent};
pub use attacks::{Attack, AttackKind, AttackSpec};
pub use environments::EnvKind;
pub use metrics::{ArWeights, MetricsReport};
pub use pgn::{PgnConfig, PgnObjective, PgnVariant, TrainedPgn};
