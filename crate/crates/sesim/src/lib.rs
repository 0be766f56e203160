//! Files, synthetic data and the command-line driver around `sesim-core`.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod synth;

pub use error::{Error, Result};
