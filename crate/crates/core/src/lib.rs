//! Allocation-only core of the cross-lingual meta-learning pipeline.
//!
//! Everything in this crate is pure computation over in-memory data: language
//! clustering and centroid selection, corpus tagging and task sampling, a small
//! encoder-decoder model with its own reverse-mode autodiff, MAML with exact
//! second-order meta-gradients, and the automatic generation metrics. File
//! formats, checkpoints and the command line live in the `xnlg` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod lang;
pub mod langspace;
pub mod metalearn;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use lang::LangCode;
