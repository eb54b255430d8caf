//! Simulation and rate analysis for local gradient methods.
//!
//! The crate is organized around a single update rule: every client takes
//! steps along a local direction built from a pluggable gradient estimator
//! minus a pluggable shift, and a communication schedule occasionally
//! replaces all local iterates by their average. On top of the simulator
//! sit a parameter calculator that turns method and problem constants into
//! stepsize bounds and iteration-count predictions, and a verification
//! suite that checks the governing inequalities empirically.
//!
//! Start with the `examples/` directory for runnable entry points, or the
//! `fedsim` binary for the `run` / `sweep` / `theory` / `verify` / `info`
//! subcommands.

pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod methods;
pub mod problems;
pub mod rng;
pub mod theory;
pub mod vecops;
pub mod verify;

pub use error::{Error, Result};
