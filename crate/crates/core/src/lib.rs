//! User-to-base-station association in UAV/RIS-augmented networks, learned by
//! spiking neural networks.
//!
//! The pipeline is:
//!
//! 1. [`scenario`] simulates mobile receivers and produces one rate matrix per
//!    time step.
//! 2. [`oracle`] labels each matrix with the capacity-constrained optimal
//!    association by exhaustive search.
//! 3. [`snn`] is a small LIF network engine with surrogate-gradient BPTT and
//!    Adam.
//! 4. [`models`] wraps the engine as a centralized (top-down) or a per-receiver
//!    (bottom-up) estimator.
//! 5. [`training`] runs the mini-batch loop with plateau LR decay, early
//!    stopping and checkpointing.
//! 6. [`eval`] compares predictions to the oracle labels.

pub mod cli;
pub mod error;
pub mod eval;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod scenario;
pub mod snn;
pub mod training;

pub use error::{Error, Result};
pub use oracle::{Association, LabeledInstance};
pub use scenario::{Dataset, RateMatrix, ScenarioConfig};
