//! Simulator for Majorana-zero-mode braiding on a qubit tri-junction.
//!
//! The crate is organized bottom-up: `simcore` provides dense state-vector and
//! density-matrix primitives with an exact evolution oracle, `models` builds the
//! tri-junction and Kitaev-chain Hamiltonians with their time-dependent coupling
//! schedule, `circuits` produces initializer and Trotter-step circuits in the two
//! gate flavors, `pulses` scales cross-resonance schedules with rotation angle,
//! `noise` applies the bit-flip error model, `tomo` runs two-qubit process
//! tomography, and `exp` drives the end-to-end experiments behind the CLI.

pub mod circuits;
pub mod exp;
pub mod models;
pub mod noise;
pub mod pulses;
pub mod simcore;
pub mod tomo;
