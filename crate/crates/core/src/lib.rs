//! Representation transfer from a dual-branch recommendation foundation
//! model into downstream ad models, on a synthetic content + ads stream.

pub mod aggregate;
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod lfm;
pub mod nncore;
pub mod repstore;
pub mod simstream;
pub mod transfer;

pub use error::{Error, Result};
