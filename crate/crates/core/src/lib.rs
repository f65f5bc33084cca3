//! Heterogeneous-agent mirror descent policy optimization for cooperative
//! Markov games.
//!
//! The crate is split into:
//!
//! * [`tabular`]: exact evaluation of values, advantages, occupancy measures
//!   and the multi-agent identities on small finite games. Used as the
//!   ground-truth oracle and by the exact-advantage training mode.
//! * [`nn`]: a small reverse-mode tape, MLPs, and categorical / diagonal
//!   Gaussian policy heads.
//! * [`env`]: desk-scale cooperative environments.
//! * [`rollout`]: trajectory collection, GAE and the centralized critic.
//! * [`trainer`]: the sequential per-agent mirror descent learner and the
//!   clipped / independent baselines.
//! * [`harness`]: experiment configs, metric files, the verification suite
//!   and the SGD-step ablation driver used by the `hamdpo` binary.

pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rollout;
pub mod seeding;
pub mod tabular;
pub mod trainer;

pub use error::{Error, Result};
