use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::event::{Domain, Event, Task};
use crate::error::{Error, Result};
use crate::evalkit::AucAccumulator;
use crate::lfm::{LfmModel, TapName};
use crate::nncore::{Adam, Tensor};
use crate::repstore::{Metric, Mode, ReprKey, ReprKind, Store};
use crate::transfer::{DownstreamModel, Upstream};

/// Which stored vectors a served model receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferInput {
    None,
    /// `UR(u)` as the fusion input.
    Ur,
    /// `CR(u)`, plus `CR(i)` when the loop includes item-level CR.
    Cr,
    /// `UR(u) ‖ CR(u)`, plus `CR(i)` when the loop includes item-level CR.
    UrCr,
    /// `CR(u)` (plus `CR(i)`) as the fusion input, with `UR(u)` and `IR(i)`
    /// as side features.
    TowersAndCr,
    /// `UR(u)` and `IR(i)` as separate inputs (isomorphic module, retrieval).
    Towers,
}

/// A downstream model wired into the serving loop for one ad task.
#[derive(Clone, Debug)]
pub struct ServedModel {
    pub name: String,
    pub task: Task,
    pub input: TransferInput,
    pub model: DownstreamModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    /// First event index whose writes are corrupted.
    pub at_event: u64,
    /// Number of consecutive events affected.
    pub duration: u64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub batch_size: usize,
    /// Train the foundation model every this many batches; 0 keeps it fixed.
    pub lfm_update_every: usize,
    /// Tap used as CR; `None` selects the penultimate DNN layer.
    pub cr_tap: Option<TapName>,
    pub include_cr_item: bool,
    pub snapshot_every: u64,
    pub log_every: u64,
    /// Predictions per model covered by each logged window AUC.
    pub auc_window: usize,
    pub fault: Option<FaultInjection>,
    pub audit: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            batch_size: 32,
            lfm_update_every: 1,
            cr_tap: None,
            include_cr_item: false,
            snapshot_every: 10_000,
            log_every: 1_000,
            auc_window: 2_000,
            fault: None,
            audit: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOp {
    Read,
    Write,
    Rejected,
    Rollback,
    Snapshot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub event_index: u64,
    pub op: AuditOp,
    pub kind: Option<ReprKind>,
    pub entity_id: Option<u64>,
    /// Snapshot id for snapshot and rollback entries.
    pub snapshot: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeRecord {
    pub event_index: u64,
    pub kind: ReprKind,
    pub metric: Metric,
    pub change: f64,
    pub rolled_back_to: u64,
    /// CRC-32 of the store contents right after the rollback, in snapshot
    /// file format.
    pub restored_crc: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub event_index: u64,
    pub window_auc: BTreeMap<String, Option<f64>>,
    pub store_status: BTreeMap<String, Mode>,
    pub lfm_loss: Option<f64>,
    pub loss: BTreeMap<String, Option<f64>>,
    pub freezes: usize,
}

/// Everything a loop run produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub model_names: Vec<String>,
    pub records: Vec<MetricsRecord>,
    /// Progressive predictions per served model, in stream order.
    pub predictions: Vec<AucAccumulator>,
    pub freezes: Vec<FreezeRecord>,
    pub snapshots: Vec<(u64, u64)>,
    pub audit: Vec<AuditEntry>,
}

impl MetricsLog {
    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.model_names.iter().position(|n| n == name)
    }

    /// AUC over the last `window` predictions of `model`.
    pub fn final_auc(&self, model: usize, window: usize) -> Result<f64> {
        self.predictions.get(model).ok_or(Error::Config(format!("no model {model}")))?.window_auc(window)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?)?;
        }
        for f in &self.freezes {
            writeln!(w, "{}", serde_json::json!({ "freeze": f }))?;
        }
        Ok(())
    }

    pub fn write_audit_jsonl(&self, mut w: impl Write) -> Result<()> {
        for a in &self.audit {
            writeln!(w, "{}", serde_json::to_string(a).map_err(|e| Error::Config(e.to_string()))?)?;
        }
        Ok(())
    }
}

/// Everything the loop mutates, bundled so the serving steps can borrow it.
struct Ctx<'a> {
    store: &'a mut Store,
    log: MetricsLog,
    cfg: &'a LoopConfig,
}

impl Ctx<'_> {
    fn audit(&mut self, event_index: u64, op: AuditOp, key: Option<ReprKey>, snapshot: Option<u64>) {
        if self.cfg.audit {
            self.log.audit.push(AuditEntry { event_index, op, kind: key.map(|k| k.kind), entity_id: key.map(|k| k.entity_id), snapshot });
        }
    }

    fn read(&mut self, event_index: u64, key: ReprKey, dim: usize) -> Vec<f64> {
        self.audit(event_index, AuditOp::Read, Some(key), None);
        self.store.get(key).map_or_else(|| vec![0.0; dim], |t| t.data().to_vec())
    }

    /// Writes one vector; a rejected write rolls the store back to its latest
    /// snapshot straight away.
    fn write(&mut self, event_index: u64, key: ReprKey, value: &[f64], now: f64) -> Result<()> {
        match self.store.put(key, &Tensor::row_vector(value.to_vec()), now) {
            Ok(()) => {
                self.audit(event_index, AuditOp::Write, Some(key), None);
                Ok(())
            }
            Err(Error::Frozen(_)) | Err(Error::Numeric(_)) => {
                self.audit(event_index, AuditOp::Rejected, Some(key), None);
                let reason = self.store.status(key.kind).frozen_reason.expect("rejected write freezes");
                let id = self.store.latest_snapshot().expect("loop takes a snapshot before serving");
                self.store.rollback(id)?;
                self.audit(event_index, AuditOp::Rollback, None, Some(id));
                self.log.freezes.push(FreezeRecord {
                    event_index,
                    kind: key.kind,
                    metric: reason.metric,
                    change: reason.change,
                    rolled_back_to: id,
                    restored_crc: crc32fast::hash(&self.store.to_bytes(id)),
                });
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn snapshot(&mut self, event_index: u64, now: f64) -> Result<()> {
        if self.store.is_frozen() {
            return Ok(());
        }
        let id = self.store.snapshot(now)?;
        self.log.snapshots.push((event_index, id));
        self.audit(event_index, AuditOp::Snapshot, None, Some(id));
        Ok(())
    }
}

fn upstream_dims(lfm: &LfmModel, tap: TapName, input: TransferInput, with_item: bool) -> Result<(usize, usize)> {
    let cr = lfm.config.tap_dim(tap)? * if with_item { 2 } else { 1 };
    Ok(match input {
        TransferInput::None => (0, 0),
        TransferInput::Ur => (lfm.config.ur_dim, 0),
        TransferInput::Cr => (cr, 0),
        TransferInput::UrCr => (lfm.config.ur_dim + cr, 0),
        TransferInput::TowersAndCr => (cr, lfm.config.ur_dim + lfm.config.ir_dim),
        TransferInput::Towers => (lfm.config.ur_dim, lfm.config.ir_dim),
    })
}

#[derive(Default)]
struct Running {
    sum: f64,
    n: usize,
}

impl Running {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let out = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Running::default();
        out
    }
}

/// Replays the serving workflow over `events`.
///
/// Per mini-batch the foundation model's parameters are fixed, so its
/// representations for the whole batch are computed up front. Then, event by
/// event: stored UR/IR/CR are read, and fresh UR/IR (plus CR for ad events)
/// are written. Every served model scores its events from what was read, and
/// only after that do the labels train the foundation model and the served
/// models. A write rejected by the store monitor rolls the store back to its
/// latest snapshot; reads never stop.
pub fn run_online_loop(
    lfm: &mut LfmModel,
    lfm_opt: &mut Adam,
    models: &mut [ServedModel],
    store: &mut Store,
    events: &[Event],
    cfg: &LoopConfig,
) -> Result<MetricsLog> {
    if cfg.batch_size == 0 || cfg.log_every == 0 || cfg.snapshot_every == 0 {
        return Err(Error::Config("batch_size, log_every and snapshot_every must be positive".into()));
    }
    let tap = cfg.cr_tap.unwrap_or_else(|| lfm.config.penultimate_tap());
    lfm.config.check_tap(tap)?;
    let dims: Vec<(usize, usize)> = models.iter().map(|m| upstream_dims(lfm, tap, m.input, cfg.include_cr_item)).collect::<Result<_>>()?;
    let (ur_dim, ir_dim, cr_dim) = (lfm.config.ur_dim, lfm.config.ir_dim, lfm.config.tap_dim(tap)?);

    let mut ctx = Ctx {
        store,
        cfg,
        log: MetricsLog {
            model_names: models.iter().map(|m| m.name.clone()).collect(),
            predictions: vec![AucAccumulator::new(); models.len()],
            ..MetricsLog::default()
        },
    };
    let start_time = events.first().map_or(0.0, |e| e.timestamp);
    if ctx.store.latest_snapshot().is_none() {
        ctx.snapshot(events.first().map_or(0, |e| e.index), start_time)?;
    }
    let mut lfm_loss = Running::default();
    let mut losses: Vec<Running> = models.iter().map(|_| Running::default()).collect();
    let mut seen = 0u64;
    let mut next_log = cfg.log_every;
    let mut next_snapshot = cfg.snapshot_every;

    for (b, batch) in events.chunks(cfg.batch_size).enumerate() {
        let users: Vec<usize> = batch.iter().map(|e| e.user_id).collect();
        let items: Vec<usize> = batch.iter().map(|e| e.item_id).collect();
        let ur = lfm.user_repr(&users)?;
        let ir = lfm.item_repr(&items)?;
        let ad_rows: Vec<usize> = (0..batch.len()).filter(|&r| batch[r].domain == Domain::Ad).collect();
        let cr = lfm.extract_batch(&ad_rows.iter().map(|&r| users[r]).collect::<Vec<_>>(), &ad_rows.iter().map(|&r| items[r]).collect::<Vec<_>>(), tap)?;

        // Rows of served inputs per model, gathered while walking the batch.
        let mut served: Vec<(Vec<Event>, Vec<f64>, Vec<f64>)> = models.iter().map(|_| (Vec::new(), Vec::new(), Vec::new())).collect();
        let mut ad_k = 0;
        for (r, ev) in batch.iter().enumerate() {
            let (u, i) = (ev.user_id as u64, ev.item_id as u64);
            if ev.domain == Domain::Ad {
                let ur_read = ctx.read(ev.index, ReprKey::new(ReprKind::Ur, u), ur_dim);
                let ir_read = ctx.read(ev.index, ReprKey::new(ReprKind::Ir, i), ir_dim);
                let cru = ctx.read(ev.index, ReprKey::new(ReprKind::CrUser, u), cr_dim);
                let cri = ctx.read(ev.index, ReprKey::new(ReprKind::CrItem, i), cr_dim);
                let mut crs = cru.clone();
                if cfg.include_cr_item {
                    crs.extend(&cri);
                }
                for (m, slot) in models.iter().zip(served.iter_mut()) {
                    if m.task != ev.task {
                        continue;
                    }
                    slot.0.push(*ev);
                    match m.input {
                        TransferInput::None => {}
                        TransferInput::Ur => slot.1.extend(&ur_read),
                        TransferInput::Cr => slot.1.extend(&crs),
                        TransferInput::UrCr => {
                            slot.1.extend(&ur_read);
                            slot.1.extend(&crs);
                        }
                        TransferInput::TowersAndCr => {
                            slot.1.extend(&crs);
                            slot.2.extend(&ur_read);
                            slot.2.extend(&ir_read);
                        }
                        TransferInput::Towers => {
                            slot.1.extend(&ur_read);
                            slot.2.extend(&ir_read);
                        }
                    }
                }
            }

            let scale = match cfg.fault {
                Some(f) if ev.index >= f.at_event && ev.index < f.at_event + f.duration => f.scale,
                _ => 1.0,
            };
            let scaled = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<f64>>();
            ctx.write(ev.index, ReprKey::new(ReprKind::Ur, u), &scaled(ur.row(r)), ev.timestamp)?;
            ctx.write(ev.index, ReprKey::new(ReprKind::Ir, i), &scaled(ir.row(r)), ev.timestamp)?;
            if ev.domain == Domain::Ad {
                let c = scaled(cr.row(ad_k));
                ad_k += 1;
                ctx.write(ev.index, ReprKey::new(ReprKind::CrUser, u), &c, ev.timestamp)?;
                ctx.write(ev.index, ReprKey::new(ReprKind::CrItem, i), &c, ev.timestamp)?;
            }
        }

        // Score first, then learn from the labels.
        for (k, (m, (evs, rows, rows2))) in models.iter_mut().zip(&served).enumerate() {
            let (d1, d2) = dims[k];
            if evs.is_empty() {
                continue;
            }
            let n = evs.len();
            let up = match m.input {
                TransferInput::None => Upstream::none(),
                TransferInput::Towers => Upstream::towers(Tensor::from_vec(n, d1, rows.clone())?, Tensor::from_vec(n, d2, rows2.clone())?),
                TransferInput::TowersAndCr => {
                    let towers = Tensor::from_vec(n, d2, rows2.clone())?;
                    let split = lfm.config.ur_dim;
                    Upstream::cr(Tensor::from_vec(n, d1, rows.clone())?)
                        .with_towers(towers.slice_cols(0, split)?, towers.slice_cols(split, d2)?)
                }
                _ => Upstream::cr(Tensor::from_vec(n, d1, rows.clone())?),
            };
            for (p, ev) in m.model.predict(evs, &up)?.into_iter().zip(evs) {
                ctx.log.predictions[k].push(p, ev.label);
            }
            losses[k].add(m.model.train_step(evs, &up)?);
        }
        if cfg.lfm_update_every > 0 && b % cfg.lfm_update_every == 0 {
            lfm_loss.add(lfm.train_step(lfm_opt, batch)?);
        }

        seen += batch.len() as u64;
        let last = batch.last().expect("chunks are non-empty");
        if seen >= next_snapshot {
            ctx.snapshot(last.index, last.timestamp)?;
            next_snapshot += cfg.snapshot_every;
        }
        if seen >= next_log || seen == events.len() as u64 {
            let mut window_auc = BTreeMap::new();
            let mut loss = BTreeMap::new();
            for (k, name) in ctx.log.model_names.iter().enumerate() {
                window_auc.insert(name.clone(), ctx.log.predictions[k].window_auc(cfg.auc_window).ok());
                loss.insert(name.clone(), losses[k].take());
            }
            let store_status = ReprKind::ALL.iter().map(|&k| (k.to_string(), ctx.store.status(k).mode)).collect();
            ctx.log.records.push(MetricsRecord {
                event_index: last.index,
                window_auc,
                store_status,
                lfm_loss: lfm_loss.take(),
                loss,
                freezes: ctx.log.freezes.len(),
            });
            while next_log <= seen {
                next_log += cfg.log_every;
            }
        }
    }
    Ok(ctx.log)
}
