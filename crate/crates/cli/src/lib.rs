//! Command-line front end for the mission simulator: batch runs, log
//! summaries, pass listings, codec utilities and the operator endpoint.

pub mod args;
pub mod error;
pub mod ops;
pub mod raster_io;
pub mod serve;

pub use error::CliError;
