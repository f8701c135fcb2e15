//! Moving upstream representations into downstream models: gated and linear
//! feature fusion, the isomorphic interaction module, and standalone
//! retrieval.

mod downstream;
mod fuse;
mod retrieval;

pub use downstream::{downstream_train_step, Block, DownstreamConfig, DownstreamModel, FusionMode, IimShape, Upstream};
pub use fuse::{linear_fuse, nonlinear_fuse, FusionAdapter, GateTrace};
pub use retrieval::{cosine, infonce_loss, infonce_with_grad, retrieval_score, RetrievalAdapters};
