//! Data-driven safety certificates for black-box stochastic systems.
//!
//! A polynomial barrier certificate is searched for by a scenario linear
//! program built from sampled transitions. When the optimum clears a
//! Lipschitz-derived margin, the barrier certifies a lower bound on the
//! probability that trajectories avoid the unsafe set over a finite horizon,
//! with a confidence fixed by the sample counts.

pub mod bounds;
pub mod error;
pub mod lp;
pub mod pipeline;
pub mod poly;
pub mod scenario;
pub mod systems;

pub use error::{Error, Result};
