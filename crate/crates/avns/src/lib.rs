//! File formats, command runners and the command-line front end for the
//! audio-visual noise suppressor.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod manifest;
pub mod report;
pub mod runner;
pub mod wav;

pub use error::{AppError, Result};
