//! Simulation laboratory for the supermarket model: join-the-shortest of `d`
//! uniformly sampled queues.
//!
//! * [`model`]: queue states, seeded event streams and the transition map.
//! * [`simulator`]: trajectories, spaced equilibrium sampling, tail and
//!   balance estimates, interval extremes and initial-customer survival.
//! * [`coupling`]: shared-stream replicas: contraction audits, coalescence
//!   and empirical mixing profiles.
//! * [`meanfield`]: the `n → ∞` ODE system and its fixed point.
//! * [`oracle`]: exact CTMC computations for tiny capped systems.
//! * [`theory`]: closed-form predictions and probability bounds.
//! * [`verify`]: named acceptance checks shared by the CLI and test suite.

pub mod coupling;
pub mod error;
pub mod io;
pub mod meanfield;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod theory;
pub mod verify;

pub use error::{Result, SimError};
pub use model::{evolve, Event, EventStream, ModelParams, QueueState};
