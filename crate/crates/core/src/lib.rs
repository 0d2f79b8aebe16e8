//! Observation-space attacks on Gaussian reinforcement-learning policies.
//!
//! The numeric core ([`policy`], [`divergence`], [`attacks`]) is generic over
//! [`Scalar`] (`f32` or `f64`). Environments, training and the experiment
//! harness run in `f64`.

pub mod attacks;
pub mod divergence;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod mlp;
pub mod oracle;
pub mod policy;
pub mod scalar;
pub mod weights;

pub mod envs;
pub mod seed;

pub mod rollout;
pub mod training;

pub mod harness;

pub use attacks::{run_attack, AttackConfig, AttackKind, AttackOutcome};
pub use divergence::{DivGrad, DivergenceKind};
pub use envs::{EnvConfig, Task};
pub use error::{Error, Result};
pub use gaussian::{DiagGaussian, Observation};
pub use policy::{PolicyNet, StochasticPolicy, ValueNet};
pub use scalar::Scalar;

pub type PolicyNetF64 = PolicyNet<f64>;
pub type PolicyNetF32 = PolicyNet<f32>;
pub type ValueNetF64 = ValueNet<f64>;
pub type ValueNetF32 = ValueNet<f32>;
pub type DiagGaussianF64 = DiagGaussian<f64>;
pub type DiagGaussianF32 = DiagGaussian<f32>;
pub type ObservationF64 = Observation<f64>;
pub type ObservationF32 = Observation<f32>;
pub type AttackOutcomeF64 = AttackOutcome<f64>;
