//! Positive self-similar Markov processes through the Lamperti transform.
//!
//! The crate simulates killed Lévy processes, maps them to self-similar
//! paths, samples exponential functionals, builds weighted Monte Carlo
//! estimates of self-similar entrance laws and checks the identities those
//! laws must satisfy.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod entrance;
pub mod error;
pub mod excursion;
pub mod exp_functional;
pub mod extensions;
pub mod jump_law;
pub mod lamperti;
pub mod levy;
pub mod quad;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod test_fn;

pub use error::{Error, Result};
pub use jump_law::JumpLaw;
pub use levy::{CramerClass, LevyPath, LevyTriplet};
pub use rng::{SimRng, Streams};
