//! Atom-number statistics of a trap that is loaded at random from a
//! reservoir and loses atoms through one-body decay and ρ-body collisions.
//!
//! Three backends compute the occupancy distribution and its Fano factor:
//!
//! - [`master`]: the truncated master equation, integrated in time or solved
//!   directly for its stationary distribution;
//! - [`mc`]: exact event-driven trajectories;
//! - [`vankampen`]: the system-size expansion and its closed-form limits.
//!
//! [`sweep`] runs them over a range of loading rates.

pub mod error;
pub mod generator;
pub mod io;
pub mod master;
pub mod mc;
pub mod model;
pub mod ode;
pub mod presets;
pub mod sweep;
pub mod vankampen;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use generator::{build_generator, default_n_max, truncation_check, Generator, TruncationReport};
pub use master::{
    adequate_n_max, evolve, moment_rhs, moments, solve_steady, steady_state, EvolveOptions, Moments, StateDistribution,
};
pub use mc::{histogram, sample, InitialLaw, McOptions, TrajectoryEnsemble};
pub use model::{event_rate, predict_steady_mean, LossChannel, ModelParams};
pub use presets::Preset;
pub use sweep::{gaussian_check, run_sweep, Backend, SweepRow, SweepSpec};
pub use vankampen::{to_dimensionless, vk_evolve, vk_steady, VanKampenState};
