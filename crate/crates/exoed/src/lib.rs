//! Files, command line and Monte Carlo studies around [`exoed_core`].
//!
//! * [`config`]: JSON run configuration and flag overrides.
//! * [`io`]: dataset, table, trial and polyline CSV files and JSON results.
//! * [`study`]: parallel design solves, table reproduction, the robustness
//!   study and plot data.
//! * [`cli`]: the `exoed` command.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod study;

pub use error::{ExoedError, Result};
