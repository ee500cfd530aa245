//! File formats, datasets, training driver and command line for WeatherCycle.
//!
//! The numerics live in [`weathercycle_core`]; this crate adds image decoding,
//! folder datasets, config files, checkpoint files, embedding backends and
//! the `weathercycle` binary.

pub mod analyze;
pub mod backend;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod infer;
pub mod io;
pub mod settings;
pub mod train;

pub use error::{CliError, CliResult, ErrorKind};
pub use weathercycle_core as core;
