//! Transmit power control for device-to-device interference networks.
//!
//! The crate implements three allocation strategies over a shared Rayleigh /
//! lognormal-shadowing channel model and a Monte-Carlo harness to compare
//! them:
//!
//! - maximum power (every transmitter at `p_max`),
//! - iterative projected gradient descent on the negative sum rate,
//! - a deep-unfolded variant of the same iteration whose per-layer step
//!   parameters are learned without supervision (loss = negative mean sum
//!   rate), either offline over batches of channel draws or online on a
//!   single realization.
//!
//! All randomness flows through explicitly seeded generators; identical
//! seeds reproduce experiment artifacts byte for byte.

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod objective;
pub mod pgd;
pub mod rng;
pub mod unfolded;

pub use error::{Error, Result};
