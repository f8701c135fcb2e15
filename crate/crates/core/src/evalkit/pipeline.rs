use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::AucAccumulator;
use crate::error::{Error, Result};
use crate::lfm::{build_lfm, BranchMode, FeatureMap, LfmConfig, LfmModel};
use crate::nncore::{Adam, AdamConfig, Tensor};
use crate::repstore::StoreConfig;
use crate::simstream::{gen_world, Domain, Event, LoopConfig, StreamState, Task, World, WorldConfig};
use crate::transfer::{DownstreamConfig, DownstreamModel, Upstream};

/// Everything that defines one end-to-end experiment, minus the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub world: WorldConfig,
    /// Vocabulary sizes are overwritten from the world.
    pub lfm: LfmConfig,
    pub lfm_adam: AdamConfig,
    pub pretrain_events: usize,
    pub pretrain_batch: usize,
    /// Passes over the pretraining stream.
    pub pretrain_epochs: usize,
    pub online_events: usize,
    pub downstream: DownstreamConfig,
    pub store: StoreConfig,
    /// Fixed decay constant; `None` derives it from the pretraining stream.
    pub tau: Option<f64>,
    /// Multiple of the mean per-user ad inter-arrival gap used as τ.
    pub tau_multiplier: f64,
    pub online: LoopConfig,
    /// Trailing predictions scored for table AUCs.
    pub eval_window: usize,
    pub retrieval: RetrievalTraining,
}

/// Standalone retrieval adapters trained on ad positives from both stream
/// segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalTraining {
    pub hidden: usize,
    pub dim: usize,
    pub temperature: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for RetrievalTraining {
    fn default() -> Self {
        RetrievalTraining { hidden: 32, dim: 16, temperature: 0.2, lr: 5e-3, epochs: 10, batch: 64 }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            world: WorldConfig::default(),
            lfm: LfmConfig::default(),
            lfm_adam: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
            pretrain_events: 600_000,
            pretrain_batch: 64,
            pretrain_epochs: 1,
            online_events: 60_000,
            downstream: DownstreamConfig { adam: AdamConfig { lr: 2e-3, ..AdamConfig::default() }, ..DownstreamConfig::default() },
            store: StoreConfig::default(),
            tau: None,
            tau_multiplier: 10.0,
            online: LoopConfig::default(),
            eval_window: 4_000,
            retrieval: RetrievalTraining::default(),
        }
    }
}

/// Mixes a run seed with a component tag so components draw independent
/// streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_STREAM: u64 = 1;
const TAG_LFM: u64 = 2;
const TAG_DOWNSTREAM: u64 = 3;

/// Which part of the pretraining stream the foundation model sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFilter {
    All,
    ContentOnly,
    AdOnly,
}

impl DataFilter {
    fn keeps(self, e: &Event) -> bool {
        match self {
            DataFilter::All => true,
            DataFilter::ContentOnly => e.domain == Domain::Content,
            DataFilter::AdOnly => e.domain == Domain::Ad,
        }
    }
}

/// A world and its two stream segments, shared by every arm of a seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub seed: u64,
    pub config: PipelineConfig,
    pub world: World,
    pub pretrain: Vec<Event>,
    pub online: Vec<Event>,
    pub tau: f64,
    lfms: BTreeMap<(BranchMode, DataFilter), (LfmModel, Adam)>,
    losses: BTreeMap<(BranchMode, DataFilter), Vec<f64>>,
}

/// Pretraining batches averaged into one logged loss.
pub const LOSS_LOG_BATCHES: usize = 500;

/// Mean gap between consecutive ad events of the same user.
pub fn mean_user_ad_gap(events: &[Event]) -> Option<f64> {
    let mut last: BTreeMap<usize, f64> = BTreeMap::new();
    let (mut sum, mut n) = (0.0, 0usize);
    for e in events.iter().filter(|e| e.domain == Domain::Ad) {
        if let Some(prev) = last.insert(e.user_id, e.timestamp) {
            sum += e.timestamp - prev;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

impl Prepared {
    pub fn new(config: &PipelineConfig, seed: u64) -> Result<Self> {
        let mut config = config.clone();
        config.world.seed = seed;
        config.lfm.user_vocab = config.world.n_users;
        config.lfm.item_vocab = config.world.n_items;
        config.lfm.user_segments = config.world.n_user_segments;
        config.lfm.item_categories = config.world.n_item_categories;
        config.lfm.seed = derive_seed(seed, TAG_LFM);
        config.downstream.seed = derive_seed(seed, TAG_DOWNSTREAM);
        config.downstream.ur_dim = config.lfm.ur_dim;
        config.downstream.ir_dim = config.lfm.ir_dim;
        config.lfm.validate()?;
        let world = gen_world(&config.world)?;
        let mut state = StreamState::new(derive_seed(seed, TAG_STREAM));
        let pretrain: Vec<Event> = (0..config.pretrain_events).map(|_| world.next_event(&mut state)).collect();
        let online: Vec<Event> = (0..config.online_events).map(|_| world.next_event(&mut state)).collect();
        let tau = match config.tau {
            Some(t) => t,
            None => config.tau_multiplier * mean_user_ad_gap(&pretrain).unwrap_or(config.world.mean_gap_seconds),
        };
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("derived tau {tau} is not positive")));
        }
        config.store.tau = tau;
        Ok(Prepared { seed, config, world, pretrain, online, tau, lfms: BTreeMap::new(), losses: BTreeMap::new() })
    }

    pub fn features(&self) -> FeatureMap {
        FeatureMap::from_world(&self.world)
    }

    pub fn lfm_config(&self, mode: BranchMode) -> LfmConfig {
        LfmConfig { branch_mode: mode, ..self.config.lfm.clone() }
    }

    /// Foundation model pretrained on the filtered pretraining stream, with
    /// its optimizer state; cached per `(mode, filter)`.
    pub fn pretrained(&mut self, mode: BranchMode, filter: DataFilter) -> Result<(LfmModel, Adam)> {
        if let Some(hit) = self.lfms.get(&(mode, filter)) {
            return Ok(hit.clone());
        }
        let mut lfm = build_lfm(&self.lfm_config(mode), self.features())?;
        let mut opt = Adam::new(self.config.lfm_adam);
        let data: Vec<Event> = self.pretrain.iter().filter(|e| filter.keeps(e)).copied().collect();
        let (mut log, mut sum, mut n) = (Vec::new(), 0.0, 0);
        for _ in 0..self.config.pretrain_epochs {
            for batch in data.chunks(self.config.pretrain_batch.max(1)) {
                sum += lfm.train_step(&mut opt, batch)?;
                n += 1;
                if n == LOSS_LOG_BATCHES {
                    log.push(sum / n as f64);
                    (sum, n) = (0.0, 0);
                }
            }
        }
        if n > 0 {
            log.push(sum / n as f64);
        }
        self.losses.insert((mode, filter), log);
        self.lfms.insert((mode, filter), (lfm.clone(), opt.clone()));
        Ok((lfm, opt))
    }

    /// Mean training loss per [`LOSS_LOG_BATCHES`] batches of a model
    /// pretrained by this instance.
    pub fn pretrain_losses(&self, mode: BranchMode, filter: DataFilter) -> Option<&[f64]> {
        self.losses.get(&(mode, filter)).map(Vec::as_slice)
    }

    /// Online ad events for `task`.
    pub fn online_ad(&self, task: Task) -> Vec<Event> {
        self.online.iter().filter(|e| e.domain == Domain::Ad && e.task == task).copied().collect()
    }

    pub fn downstream(&self, config: DownstreamConfig) -> Result<DownstreamModel> {
        DownstreamModel::new(config, self.features())
    }
}

/// Trains `model` progressively over `events` in mini-batches, scoring each
/// batch before learning from it. `upstream` rows align with `events`.
pub fn progressive(model: &mut DownstreamModel, events: &[Event], upstream: &Upstream, batch: usize) -> Result<AucAccumulator> {
    let mut acc = AucAccumulator::new();
    let mut start = 0;
    for chunk in events.chunks(batch.max(1)) {
        let idx: Vec<usize> = (start..start + chunk.len()).collect();
        let up = upstream.gather_rows(&idx);
        for (p, e) in model.predict(chunk, &up)?.into_iter().zip(chunk) {
            acc.push(p, e.label);
        }
        model.train_step(chunk, &up)?;
        start += chunk.len();
    }
    Ok(acc)
}

/// Rows of `UR(u)` for each event from a frozen model.
pub fn ur_rows(lfm: &LfmModel, events: &[Event]) -> Result<Tensor> {
    lfm.user_repr(&events.iter().map(|e| e.user_id).collect::<Vec<_>>())
}

pub fn ir_rows(lfm: &LfmModel, events: &[Event]) -> Result<Tensor> {
    lfm.item_repr(&events.iter().map(|e| e.item_id).collect::<Vec<_>>())
}
