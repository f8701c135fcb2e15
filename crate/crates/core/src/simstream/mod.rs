//! Synthetic two-domain event stream and the online serving loop.

mod event;
mod online;
mod world;

pub use event::{Domain, Event, Task};
pub use online::{
    run_online_loop, AuditEntry, AuditOp, FaultInjection, FreezeRecord, LoopConfig, MetricsLog, MetricsRecord,
    ServedModel, TransferInput,
};
pub use world::{gen_world, StreamState, World, WorldConfig};
