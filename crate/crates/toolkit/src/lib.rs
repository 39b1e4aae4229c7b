//! File formats, image IO, checkpoints and the command line for
//! `lesionelev-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod imageio;
pub mod synth;

pub use error::{Result, ToolError};
