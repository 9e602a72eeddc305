//! Energy-minimal migration-bandwidth scheduling for pre-copy live migration
//! of virtual machines over wireless links.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] is the deterministic forward model of pre-copy migration
//!   (volumes, round times, downtime, energy) and the QoS residuals.
//! * [`partition`] builds the tunable-complexity rate partitions that decide
//!   which round rates are optimised and which are held.
//! * [`posynomial`] holds the log-sum-exp machinery used by the solvers.
//! * [`solver`] minimises migration energy over a partition, searches the
//!   number of pre-copy rounds, and provides a brute-force grid oracle.
//! * [`baselines`] implements the Xen linear-ramp policy and the constant-rate
//!   optimiser.
//! * [`tracker`] is the online primal-dual manager for time-varying dirty rate
//!   and power constants.
//! * [`harness`] holds presets, the fair-comparison protocol, savings metrics
//!   and CSV/markdown emitters.

// `!(x > 0.0)` is the NaN-rejecting form used by every validator.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod harness;
pub mod model;
pub mod partition;
pub mod posynomial;
pub mod solver;
pub mod tracker;

pub use error::{Error, Result};
pub use model::{
    constraint_residuals, min_feasible_rounds, simulate, MigrationOutcome, PowerModel, QosConstraints, RateSchedule,
    Residuals, StageConstants, WirelessScenario, Workload,
};
pub use partition::RatePartition;
pub use solver::{optimize_rounds, solve_tcbm, QRule, SolverOptions, SolverReport, SolverStatus};
