//! Multi-task learning for contextual bandits with funnel-structured rewards.
//!
//! A funnel is a chain of Bernoulli conversions where layer `j` is only
//! observed when every earlier layer converted, so deep layers see
//! exponentially fewer labels than shallow ones. This crate provides:
//!
//! - [`glm`]: logistic mean function, per-layer squared loss, and fitting.
//! - [`env`]: funnel ground truth, simulated and log-replay bandit environments.
//! - [`mtl`]: the two-stage shared-structure estimator, constraint-set geometry
//!   and closed-form prediction-error bounds.
//! - [`bandit`]: optimistic and penalized epsilon-greedy policies, baselines,
//!   and regret/lift accounting.
//! - [`harness`]: config-driven experiments and the `funnel` CLI.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod env;
pub mod glm;
pub mod harness;
pub mod linalg;
pub mod mtl;
pub mod optim;
pub mod rng;

pub use bandit::{Policy, PolicyKind, RunRecord};
pub use env::{BanditEnv, Environment, Funnel, ReplayEnv, RewardVector};
pub use glm::{LayerData, LayerParams, LayeredDataset, MeanFunction, ThetaStack};
pub use mtl::{BoundInputs, ConstraintSet, MtlConfig, MtlEstimate};
