//! Quantum-jump simulator for a modulated four-level emitter.
//!
//! The crate is organised as a pipeline: [`model`] holds the static system
//! description, [`drive`] evaluates time-dependent coefficients, [`master`]
//! propagates the averaged equations of motion, [`jump`] unravels them into
//! photon-count trajectories, [`dsp`] turns trajectories into spectra, and
//! [`harness`] orchestrates noise sweeps.  [`config`] maps text config files
//! onto a fully resolved run description for the CLI.

pub mod config;
pub mod drive;
pub mod dsp;
pub mod harness;
pub mod jump;
pub mod master;
pub mod model;
