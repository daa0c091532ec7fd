//! Analysis and simulation of fake flag-ACK attacks on ACK-based sensor
//! power schedules for remote Kalman estimation.
//!
//! * [`lds`]: system model, Lyapunov/Riccati operators, steady state.
//! * [`schedule`]: energy budgets, the optimal offline schedule and the
//!   ACK-driven online schedule.
//! * [`attack`]: the block-first-`r`-of-`t` attacker.
//! * [`chain`]: exact Markov-chain analysis, bounds and the switching
//!   threshold.
//! * [`montecarlo`]: seeded simulation of the full loop.
//! * [`config`] and [`cli`]: JSON experiments and the `acksiege` binary.

pub mod attack;
pub mod chain;
pub mod cli;
pub mod config;
pub mod error;
pub mod lds;
pub mod montecarlo;
pub mod rational;
pub mod schedule;

pub use attack::{AttackerConfig, CounterSemantics};
pub use chain::{ChainModel, ThresholdReport};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use lds::{steady_state, SteadyState, SystemModel};
pub use montecarlo::{simulate, SimConfig, SimReport};
pub use schedule::{DetectorConfig, EnergyModel, OfflineSchedule};
