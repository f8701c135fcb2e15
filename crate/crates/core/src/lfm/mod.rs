//! The upstream foundation model: shared user and item towers, a content and
//! an ad mix tower, and extraction taps over every candidate layer.

pub mod checkpoint;
mod config;
mod mix;
mod model;

pub use config::{BranchMode, LfmConfig, TapKind, TapName};
pub use mix::{LayerShape, MixTower, MixTrace};
pub use model::{build_lfm, FeatureMap, LfmModel, LfmOutputs, LfmTrace, Tower};

#[cfg(test)]
mod tests;
