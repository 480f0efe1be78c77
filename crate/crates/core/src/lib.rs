//! Oscillatory two-population Hawkes systems with Erlang memory kernels.
//!
//! The crate covers exact event-level simulation through the Markovian
//! cascade, the hypo-elliptic small-noise diffusion, the deterministic limit
//! system and its periodic orbits, explicit controllability constructions,
//! numerical quasipotentials with `{i}`-graph weights, and Monte Carlo studies
//! of exit times, occupation measures and weak error.

pub mod config;
pub mod model;
pub mod rng;
pub mod ode;
pub mod sde;
pub mod stats;
pub mod hawkes;
pub mod limit;
pub mod quad;
pub mod control;
pub mod io;
pub mod optim;
pub mod action;
pub mod experiments;

pub use config::{Config, ConfigError};
pub use model::{make_model, KernelParams, Model, ModelError, Population, RateSpec, State};
