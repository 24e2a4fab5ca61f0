//! Simulation and scheduling of batched, multi-instance DNN inference on a
//! memory-constrained edge platform.
//!
//! The crate is organized around a deterministic discrete-event simulator
//! ([`simcore`], [`workload`], [`batching`]) and a family of schedulers that
//! drive it: a discrete soft actor-critic agent ([`sacsched`]), an
//! exhaustive static sweep, an EDF batcher and a genetic optimizer
//! ([`baselines`]). A small from-scratch MLP ([`nnkernel`]) backs both the
//! agent and the latency predictor used for admission control
//! ([`interference`]). All randomness flows from a single root seed through
//! named sub-streams ([`rng`]), so every run is bit-reproducible.

pub mod baselines;
pub mod batching;
pub mod config;
pub mod env;
pub mod error;
pub mod interference;
pub mod nnkernel;
pub mod profiler;
pub mod rng;
pub mod runs;
pub mod sacsched;
pub mod simcore;
pub mod time;
pub mod workload;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
