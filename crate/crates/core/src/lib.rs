//! Time-reversal symmetry enhanced soft actor-critic.
//!
//! A pair of tasks that mirror each other in time (open/close a door,
//! insert/remove a peg) share their dynamics. This crate trains one agent
//! per task (or one multi-task agent) and lets each task borrow from the
//! other in two ways:
//!
//! - reversed transitions from the paired task, with reversed actions from a
//!   learned inverse model and validity checked by a learned forward model
//!   ([`dynamics`]);
//! - potential-based reward shaping with potentials regressed on successful
//!   trajectories of both tasks ([`shaping`]).
//!
//! Everything runs on a small dense-network engine ([`nn`]) in f64.

pub mod dynamics;
pub mod envs;
mod error;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod sac;
pub mod shaping;
pub mod trainer;

pub use error::{Error, Result};
