//! Staged reinforcement learning on traffic-junction gridworlds.
//!
//! Two pipelines share this crate:
//!
//! * single-agent sub-tasks solved with tabular Q-learning, whose tables are
//!   merged to initialise the combined task ([`tabular`]);
//! * a shared VDN policy trained centrally on a small team, padded and copied
//!   into independent DQN learners on a larger team ([`deeprl`], [`transfer`]).
//!
//! [`harness`] runs seeded experiments and writes metrics and plots.

pub mod deeprl;
pub mod env_multi;
pub mod env_single;
pub mod error;
pub mod gridworld;
pub mod harness;
pub mod neuralnet;
pub mod rng;
pub mod tabular;
pub mod transfer;

pub use error::{Error, Result};
