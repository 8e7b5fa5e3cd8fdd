//! File-level front end for the `farfield` pipeline: WAV/RTTM/JSON I/O,
//! configuration layering and the `simulate`, `localize`, `enhance` and
//! `evaluate` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod rttm;
pub mod truth;

pub use error::{CliError, Result};
