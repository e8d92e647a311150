//! File formats, checkpoints, pipeline stages and the command line for the
//! cross-lingual meta-learning pipeline in `xnlg-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod exec;
pub mod formats;
pub mod pipeline;

pub use error::{CliError, Result};
