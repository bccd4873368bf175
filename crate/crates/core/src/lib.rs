//! Simulation and verification library for quantum stochastic filtering:
//! discrete chains of indirect measurements, their limiting filtering SDEs
//! and generators, heavy-tailed (fractional) time changes, and desk-scale
//! measurement-feedback control.
//!
//! The runnable examples under `examples/` walk through each capability; the
//! `belavkin` binary reproduces the acceptance experiments from JSON configs
//! or built-in presets.

pub mod chain;
pub mod config;
pub mod control;
pub mod ctrw;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod lindblad;
pub mod linalg;
pub mod qstate;
pub mod report;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
