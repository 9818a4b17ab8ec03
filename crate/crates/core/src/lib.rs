//! Embarrassingly parallel batch integration of SDE and ODE systems.
//!
//! Many independent orbits of one system, each with its own initial state,
//! parameters and noise stream, are integrated on a CPU thread pool. Results
//! do not depend on the thread count or scheduling: every noise draw is
//! addressed by `(seed, orbit, step)` through a counter-based generator.

pub mod analysis;
pub mod bench;
pub mod cli;
pub mod dsl;
pub mod engine;
pub mod io;
pub mod model;
pub mod rng;
pub mod solvers;
