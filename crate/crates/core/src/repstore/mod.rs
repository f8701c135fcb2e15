//! Keyed representation storage with write monitoring, freeze, snapshots and
//! rollback.

mod monitor;
mod store;

pub use monitor::{
    check_and_freeze, monitor_stats, relative_changes, FrozenReason, Metric, Mode, MonitorStats, StoreStatus,
    DEFAULT_THRESHOLD, EPSILON,
};
pub use store::{
    deserialize, read_snapshot_file, serialize, Repr, ReprKey, ReprKind, Snapshot, Store, StoreConfig, SNAPSHOT_MAGIC,
};

#[cfg(test)]
mod tests;
