//! File formats, run configuration, replicated simulation studies and the
//! command-line front end for `snbclust-core`.

pub mod bench;
pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;

pub use error::{CliError, Result};
