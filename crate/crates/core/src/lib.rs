//! Laser-based indoor optical wireless downlink: channel model, blind
//! interference alignment (BIA) rates, utility-maximizing resource
//! allocation (exhaustive oracle, dual decomposition, uniform baseline),
//! and a neural surrogate that maps user requirements to allocations.
//!
//! The modules build on each other bottom-up:
//!
//! - [`channel`]: Gaussian-beam VCSEL links, reconfigurable detectors, noise.
//! - [`bia`]: supersymbol construction, decoding check, user / per-link rates.
//! - [`allocator`]: the proportional-fair allocation problem and its solvers.
//! - [`dataset`]: scenario sampling and solver-labelled training data.
//! - [`surrogate`]: a small from-scratch CNN/MLP trained on that data.
//! - [`harness`]: experiment drivers that write CSV results and SVG plots.

pub mod allocator;
pub mod bia;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod surrogate;

pub use error::{Error, Result};
