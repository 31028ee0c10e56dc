//! Simulation of dissipative singlet-state pumping in a two-ion crystal.
//!
//! The crate is organised bottom-up:
//!
//! * [`operator`] — tensor-product layouts, sparse operators, density states;
//! * [`scheme`] — scheme parameters, Hamiltonians and Lindblad channels;
//! * [`liouvillian`] — compiled superoperators on the conserved-charge sector;
//! * [`dynamics`] — adaptive master-equation propagation and steady states;
//! * [`measurement`] — populations, detection and reconstruction;
//! * [`protocol`] — continuous and stepwise sequences, r-averaging, ablations;
//! * [`rates`] — the effective rate-equation model;
//! * [`config`] — declarative run configuration and bundled presets;
//! * [`checks`] — the invariant suite behind `singlet validate`.

pub mod checks;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod liouvillian;
pub mod measurement;
pub mod operator;
pub mod parallel;
pub mod protocol;
pub mod rates;
pub mod scheme;
pub mod sparse;

pub use error::{Error, Result};
