//! File formats, configuration, a thread-pool executor and the `tfhts`
//! command line over [`tfhts_core`].

mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod embedding;
mod error;
pub mod executor;
pub mod report;

pub use error::{Error, Result};
