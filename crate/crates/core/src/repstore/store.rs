use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::monitor::{check_and_freeze, monitor_stats, Metric, MonitorStats, StoreStatus, DEFAULT_THRESHOLD};
use crate::aggregate::{update_cr, AggState, BetaFn};
use crate::error::{Error, Result};
use crate::nncore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprKind {
    Ur,
    Ir,
    CrUser,
    CrItem,
}

impl ReprKind {
    pub const ALL: [ReprKind; 4] = [ReprKind::Ur, ReprKind::Ir, ReprKind::CrUser, ReprKind::CrItem];

    pub fn byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }

    pub fn is_aggregated(self) -> bool {
        matches!(self, ReprKind::CrUser | ReprKind::CrItem)
    }
}

impl fmt::Display for ReprKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReprKind::Ur => "ur",
            ReprKind::Ir => "ir",
            ReprKind::CrUser => "cr_user",
            ReprKind::CrItem => "cr_item",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReprKey {
    pub kind: ReprKind,
    pub entity_id: u64,
}

impl ReprKey {
    pub fn new(kind: ReprKind, entity_id: u64) -> Self {
        ReprKey { kind, entity_id }
    }
}

/// A stored vector and the time it was last written.
#[derive(Clone, Debug, PartialEq)]
pub struct Repr {
    pub value: Tensor,
    pub last_update: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub id: u64,
    pub created_at: f64,
    pub contents: BTreeMap<ReprKey, Repr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub tau: f64,
    pub threshold: f64,
    /// Ring length of recent writes monitored per kind.
    pub window: usize,
    /// Writes a kind needs before its reference statistics are first taken.
    pub min_fill: usize,
    /// When false, CR keys are overwritten like UR/IR instead of averaged.
    pub aggregate_cr: bool,
    /// Snapshots kept in memory; older ones are dropped. 0 keeps all.
    pub keep_snapshots: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { tau: 10.0, threshold: DEFAULT_THRESHOLD, window: 256, min_fill: 64, aggregate_cr: true, keep_snapshots: 0 }
    }
}

#[derive(Clone, Debug, Default)]
struct KindMonitor {
    ring: VecDeque<Vec<f64>>,
    reference: Option<MonitorStats>,
    since_reference: usize,
}

impl KindMonitor {
    /// Reference retaken from the ring, which only ever holds accepted writes.
    fn rebase(&mut self, min_fill: usize) -> Result<()> {
        if self.ring.len() >= min_fill {
            self.reference = Some(monitor_stats(self.ring.iter().map(Vec::as_slice))?);
            self.since_reference = 0;
        }
        Ok(())
    }

    /// Stats of the ring as it would look after accepting `candidate`.
    fn candidate_stats(&self, candidate: &[f64], window: usize) -> Result<MonitorStats> {
        let skip = usize::from(self.ring.len() >= window);
        monitor_stats(self.ring.iter().skip(skip).map(Vec::as_slice).chain(std::iter::once(candidate)))
    }

    fn accept(&mut self, v: &[f64], cfg: &StoreConfig) -> Result<()> {
        if self.ring.len() >= cfg.window {
            self.ring.pop_front();
        }
        self.ring.push_back(v.to_vec());
        self.since_reference += 1;
        // Extremes grow with sample size, so the reference is retaken once the
        // ring first fills.
        let due = match self.reference {
            None => self.ring.len() >= cfg.min_fill,
            Some(_) => self.since_reference >= cfg.window || (self.ring.len() == cfg.window && self.since_reference == cfg.window - cfg.min_fill),
        };
        if due {
            self.reference = Some(monitor_stats(self.ring.iter().map(Vec::as_slice))?);
            self.since_reference = 0;
        }
        Ok(())
    }
}

/// Single-writer representation store with per-kind anomaly monitoring.
///
/// Every write is checked against the kind's reference statistics before it
/// lands. An anomalous or non-finite write is rejected and freezes that kind;
/// reads keep being served, and only [`Store::rollback`] unfreezes.
#[derive(Clone, Debug)]
pub struct Store {
    config: StoreConfig,
    beta: BetaFn,
    entries: BTreeMap<ReprKey, Repr>,
    monitors: [KindMonitor; 4],
    status: [StoreStatus; 4],
    snapshots: BTreeMap<u64, Snapshot>,
    next_snapshot: u64,
    snapshot_dir: Option<PathBuf>,
}

impl Store {
    pub fn new(config: StoreConfig) -> Result<Self> {
        if !(config.threshold > 0.0) {
            return Err(Error::Config(format!("threshold must be positive, got {}", config.threshold)));
        }
        if config.window == 0 || config.min_fill == 0 || config.min_fill > config.window {
            return Err(Error::Config("need 0 < min_fill <= window".into()));
        }
        Ok(Store {
            beta: BetaFn::new(config.tau)?,
            config,
            entries: BTreeMap::new(),
            monitors: Default::default(),
            status: [StoreStatus::LIVE; 4],
            snapshots: BTreeMap::new(),
            next_snapshot: 1,
            snapshot_dir: None,
        })
    }

    /// Also persist each snapshot as `snapshot-<id>.rst` under `dir`.
    pub fn with_snapshot_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.snapshot_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn status(&self, kind: ReprKind) -> StoreStatus {
        self.status[kind as usize]
    }

    pub fn is_frozen(&self) -> bool {
        self.status.iter().any(StoreStatus::is_frozen)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contents(&self) -> &BTreeMap<ReprKey, Repr> {
        &self.entries
    }

    pub fn get(&self, key: ReprKey) -> Option<&Tensor> {
        self.entries.get(&key).map(|r| &r.value)
    }

    pub fn get_entry(&self, key: ReprKey) -> Option<&Repr> {
        self.entries.get(&key)
    }

    /// Reference statistics currently used to vet writes of `kind`.
    pub fn reference_stats(&self, kind: ReprKind) -> Option<MonitorStats> {
        self.monitors[kind as usize].reference
    }

    /// Writes `value` under `key`: UR and IR replace, CR keys fold through the
    /// time-decayed average.
    pub fn put(&mut self, key: ReprKey, value: &Tensor, now: f64) -> Result<()> {
        let k = key.kind as usize;
        if let Some(reason) = self.status[k].frozen_reason {
            return Err(Error::Frozen(format!("{} frozen on {}", key.kind, reason.metric)));
        }
        if !value.is_finite() {
            self.status[k] = StoreStatus::frozen(Metric::NonFinite, f64::INFINITY);
            return Err(Error::Numeric(format!("write to {} {}", key.kind, key.entity_id)));
        }
        if let Some(reference) = self.monitors[k].reference {
            let curr = self.monitors[k].candidate_stats(value.data(), self.config.window)?;
            let status = check_and_freeze(&reference, &curr, self.config.threshold);
            if let Some(reason) = status.frozen_reason {
                self.status[k] = status;
                return Err(Error::Frozen(format!("{} {} changed by {:.3}", key.kind, reason.metric, reason.change)));
            }
        }
        let repr = if key.kind.is_aggregated() && self.config.aggregate_cr {
            let prev = self.entries.get(&key).map(|r| AggState { value: r.value.clone(), last_update: r.last_update });
            let s = update_cr(prev.as_ref(), value, now, &self.beta)?;
            Repr { value: s.value, last_update: s.last_update }
        } else {
            Repr { value: value.clone(), last_update: now }
        };
        self.monitors[k].accept(value.data(), &self.config)?;
        self.entries.insert(key, repr);
        Ok(())
    }

    pub fn snapshot(&mut self, now: f64) -> Result<u64> {
        if let Some(kind) = ReprKind::ALL.into_iter().find(|&k| self.status(k).is_frozen()) {
            return Err(Error::Frozen(format!("cannot snapshot while {kind} is frozen")));
        }
        let id = self.next_snapshot;
        let snap = Snapshot { id, created_at: now, contents: self.entries.clone() };
        if let Some(dir) = &self.snapshot_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("snapshot-{id}.rst")), serialize(id, &snap.contents))?;
        }
        self.snapshots.insert(id, snap);
        self.next_snapshot += 1;
        if self.config.keep_snapshots > 0 {
            while self.snapshots.len() > self.config.keep_snapshots {
                self.snapshots.pop_first();
            }
        }
        Ok(id)
    }

    pub fn snapshot_by_id(&self, id: u64) -> Option<&Snapshot> {
        self.snapshots.get(&id)
    }

    pub fn latest_snapshot(&self) -> Option<u64> {
        self.snapshots.keys().next_back().copied()
    }

    /// Restores the contents of snapshot `id` exactly and unfreezes every kind.
    pub fn rollback(&mut self, id: u64) -> Result<()> {
        let snap = self.snapshots.get(&id).ok_or(Error::NotFound(id))?;
        self.entries = snap.contents.clone();
        self.status = [StoreStatus::LIVE; 4];
        for m in &mut self.monitors {
            m.rebase(self.config.min_fill)?;
        }
        Ok(())
    }

    /// Current contents in the snapshot file format, tagged with `id`.
    pub fn to_bytes(&self, id: u64) -> Vec<u8> {
        serialize(id, &self.entries)
    }

    /// One JSON object per entry, in key order.
    pub fn export_jsonl(&self, mut w: impl Write) -> Result<()> {
        for (key, r) in &self.entries {
            let stats = monitor_stats([r.value.data()])?;
            let line = serde_json::json!({
                "kind": key.kind,
                "entity_id": key.entity_id,
                "dim": r.value.len(),
                "head": &r.value.data()[..r.value.len().min(4)],
                "last_update": r.last_update,
                "stats": stats,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"RST1";

/// `"RST1" | id u64 | count u64 | records | crc32`, records in key order as
/// `kind u8 | entity u64 | dim u32 | dim·f64 | last_update f64`.
pub fn serialize(id: u64, contents: &BTreeMap<ReprKey, Repr>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&id.to_le_bytes());
    out.extend_from_slice(&(contents.len() as u64).to_le_bytes());
    for (key, r) in contents {
        out.push(key.kind.byte());
        out.extend_from_slice(&key.entity_id.to_le_bytes());
        out.extend_from_slice(&(r.value.len() as u32).to_le_bytes());
        for v in r.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&r.last_update.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn deserialize(buf: &[u8]) -> Result<(u64, BTreeMap<ReprKey, Repr>)> {
    let bad = |m: &str| Error::Integrity(format!("snapshot: {m}"));
    if buf.len() < 24 || &buf[..4] != SNAPSHOT_MAGIC {
        return Err(bad("bad magic or truncated header"));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(bad("crc mismatch"));
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > body.len() {
            return Err(bad("truncated record"));
        }
        pos += n;
        Ok(&body[pos - n..pos])
    };
    let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let id = u64_at(take(8)?);
    let count = u64_at(take(8)?);
    let mut contents = BTreeMap::new();
    for _ in 0..count {
        let kind = ReprKind::from_byte(take(1)?[0]).ok_or_else(|| bad("unknown kind byte"))?;
        let entity_id = u64_at(take(8)?);
        let dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let payload = take(dim.checked_mul(8).ok_or_else(|| bad("dim overflow"))?)?;
        let data: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let last_update = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let key = ReprKey { kind, entity_id };
        if contents.insert(key, Repr { value: Tensor::row_vector(data), last_update }).is_some() {
            return Err(bad("duplicate key"));
        }
    }
    if pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((id, contents))
}

pub fn read_snapshot_file(path: &Path) -> Result<Snapshot> {
    let buf = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPrerequisite(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let (id, contents) = deserialize(&buf)?;
    Ok(Snapshot { id, created_at: f64::NAN, contents })
}
