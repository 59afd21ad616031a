//! Finite element simulator for a Cahn–Hilliard–Brinkman tumor growth model
//! with Moreau–Yosida regularized double-well potentials.

pub mod error;
pub mod grid;
pub mod potentials;
pub mod sparse;
pub mod brinkman;
pub mod config;
pub mod diagnostics;
pub mod presets;
pub mod io;
pub mod verify;
pub mod stepper;

pub use error::{Error, Result};
