use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::metrics::{auc, AucAccumulator};
use super::pipeline::{derive_seed, ir_rows, progressive, ur_rows, DataFilter, Prepared};
use crate::aggregate::{update_cr, AggState, BetaFn};
use crate::error::{Error, Result};
use crate::lfm::{build_lfm, BranchMode, LfmModel, TapName};
use crate::nncore::{bce_with_logits, sigmoid, Activation, Adam, AdamConfig, Mlp, Parameterized, Tensor};
use crate::simstream::{Domain, Event, Task};
use crate::transfer::{Block, DownstreamConfig, FusionMode, RetrievalAdapters, Upstream};

const TAG_SWEEP: u64 = 10;
const TAG_LEE: u64 = 11;
const TAG_RETRIEVAL: u64 = 12;

/// Ad-branch activations at `tap` for each event's pair, extracted in chunks.
pub fn tap_rows(lfm: &LfmModel, events: &[Event], tap: TapName) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(events.len());
    for chunk in events.chunks(1024) {
        let users: Vec<usize> = chunk.iter().map(|e| e.user_id).collect();
        let items: Vec<usize> = chunk.iter().map(|e| e.item_id).collect();
        let t = lfm.extract_batch(&users, &items, tap)?;
        rows.extend((0..t.rows()).map(|r| t.row(r).to_vec()));
    }
    if rows.is_empty() {
        return Ok(Tensor::zeros(0, lfm.config.tap_dim(tap)?));
    }
    Tensor::from_rows(&rows)
}

/// Replays `events` in order through a per-user time-decayed aggregate of
/// `CR(u, i)` and returns, for each CTR event, the aggregate read just before
/// that event's own update (zeros for a user's first event).
pub fn replay_user_cr(lfm: &LfmModel, events: &[Event], tap: TapName, tau: f64) -> Result<(Vec<Event>, Tensor)> {
    let f = BetaFn::new(tau)?;
    let dim = lfm.config.tap_dim(tap)?;
    let crs = tap_rows(lfm, events, tap)?;
    let mut state: BTreeMap<usize, AggState> = BTreeMap::new();
    let (mut served, mut rows) = (Vec::new(), Vec::new());
    for (k, e) in events.iter().enumerate() {
        if e.task == Task::Ctr {
            served.push(*e);
            rows.push(state.get(&e.user_id).map_or_else(|| vec![0.0; dim], |s| s.value.data().to_vec()));
        }
        let cr = Tensor::row_vector(crs.row(k).to_vec());
        let next = update_cr(state.get(&e.user_id), &cr, e.timestamp, &f)?;
        state.insert(e.user_id, next);
    }
    let rows = if rows.is_empty() { Tensor::zeros(0, dim) } else { Tensor::from_rows(&rows)? };
    Ok((served, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub seed: u64,
    pub tap: String,
    pub output_dim: usize,
    pub auc: f64,
    pub auc_lift: f64,
}

/// For every tap of the ad branch and every width in `dims`, trains a
/// downstream model with a linear projection of the tap activation appended
/// to its input and reports its AUC lift over the unfused model.
/// `trained = false` uses a freshly initialised foundation model.
pub fn layer_sweep(prep: &mut Prepared, dims: &[usize], trained: bool) -> Result<Vec<SweepResult>> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config("sweep dims must be non-empty and positive".into()));
    }
    let lfm = if trained {
        prep.pretrained(BranchMode::Dual, DataFilter::All)?.0
    } else {
        build_lfm(&prep.lfm_config(BranchMode::Dual), prep.features())?
    };
    let events = prep.online_ad(Task::Ctr);
    let window = prep.config.eval_window;
    let batch = prep.config.online.batch_size;
    let base_cfg = DownstreamConfig { seed: derive_seed(prep.seed, TAG_SWEEP), ..prep.config.downstream.clone() };
    let mut base = prep.downstream(DownstreamConfig { fusion: FusionMode::None, ..base_cfg.clone() })?;
    let base_auc = progressive(&mut base, &events, &Upstream::none(), batch)?.window_auc(window)?;
    let mut out = Vec::new();
    for tap in lfm.config.taps() {
        let rows = tap_rows(&lfm, &events, tap)?;
        let up = Upstream::cr(rows);
        for &dim in dims {
            let cfg = DownstreamConfig { fusion: FusionMode::Linear, cr_dim: lfm.config.tap_dim(tap)?, linear_dim: Some(dim), ..base_cfg.clone() };
            let mut m = prep.downstream(cfg)?;
            let a = progressive(&mut m, &events, &up, batch)?.window_auc(window)?;
            out.push(SweepResult { seed: prep.seed, tap: tap.to_string(), output_dim: dim, auc: a, auc_lift: a - base_auc });
        }
    }
    Ok(out)
}

/// A representation source compared by the light-weight evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeeVariant {
    /// Standard normal vectors, independent of the pair.
    Noise,
    /// The concatenated feature embeddings of the pair.
    EmbedConcat,
    /// The last cross layer.
    Cross,
    /// The DNN layer feeding the prediction head.
    Dnn,
}

impl LeeVariant {
    pub const ALL: [LeeVariant; 4] = [LeeVariant::Noise, LeeVariant::EmbedConcat, LeeVariant::Cross, LeeVariant::Dnn];

    pub fn name(self) -> &'static str {
        match self {
            LeeVariant::Noise => "noise",
            LeeVariant::EmbedConcat => "embed_concat",
            LeeVariant::Cross => "cross_last",
            LeeVariant::Dnn => "dnn_last",
        }
    }

    fn rows(self, lfm: &LfmModel, events: &[Event], seed: u64) -> Result<Tensor> {
        let c = &lfm.config;
        let tap = match self {
            LeeVariant::Noise => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = c.dnn_hidden;
                let data = (0..events.len() * d).map(|_| StandardNormal.sample(&mut rng)).collect();
                return Tensor::from_vec(events.len(), d, data);
            }
            LeeVariant::EmbedConcat => TapName::embed_concat(),
            LeeVariant::Cross => TapName::cross(c.n_cross_layers - 1),
            LeeVariant::Dnn => c.penultimate_tap(),
        };
        tap_rows(lfm, events, tap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeeRow {
    pub seed: u64,
    pub variant: LeeVariant,
    pub proxy_auc: f64,
    pub full_auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeeReport {
    pub rows: Vec<LeeRow>,
    /// AUC of the proxy fed a constant input.
    pub proxy_baseline: f64,
    pub proxy_seconds: f64,
    pub full_seconds: f64,
}

impl LeeReport {
    fn extreme(&self, key: impl Fn(&LeeRow) -> f64, best: bool) -> LeeVariant {
        let pick = |a: &&LeeRow, b: &&LeeRow| key(a).total_cmp(&key(b));
        let it = self.rows.iter();
        if best { it.max_by(pick) } else { it.min_by(pick) }.expect("at least two variants").variant
    }

    /// Best and worst variants agree between proxy and full evaluation.
    pub fn extremes_agree(&self) -> bool {
        self.extreme(|r| r.proxy_auc, true) == self.extreme(|r| r.full_auc, true)
            && self.extreme(|r| r.proxy_auc, false) == self.extreme(|r| r.full_auc, false)
    }
}

/// Events the proxy sees, from the start of the online ad stream.
pub const LEE_PROXY_EVENTS: usize = 3_000;

/// Progressive AUC of a `[d, 8, 1]` network on `x` alone.
pub fn lee_proxy_auc(x: &Tensor, events: &[Event], seed: u64) -> Result<f64> {
    if x.rows() != events.len() {
        return Err(Error::Dimension(format!("{} rows for {} events", x.rows(), events.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(&[x.cols(), 8, 1], Activation::Relu, false, &mut rng);
    let mut opt = Adam::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    let mut acc = AucAccumulator::new();
    let mut start = 0;
    for chunk in events.chunks(32) {
        let idx: Vec<usize> = (start..start + chunk.len()).collect();
        let xb = x.gather_rows(&idx);
        let t = net.trace(&xb)?;
        let labels: Vec<f64> = chunk.iter().map(|e| e.label).collect();
        for (z, y) in t.output().data().iter().zip(&labels) {
            acc.push(sigmoid(*z), *y);
        }
        let (_, g) = bce_with_logits(t.output(), &labels)?;
        for p in net.params_mut() {
            p.zero_grad();
        }
        net.backward(&t, &g)?;
        opt.step(net.params_mut())?;
        start += chunk.len();
    }
    acc.auc()
}

/// Ranks representation variants with a tiny proxy on a short prefix of
/// the online ad stream and, for comparison, with the full downstream model
/// (linear fusion) over the whole stream.
pub fn lee_evaluate(prep: &mut Prepared, variants: &[LeeVariant]) -> Result<LeeReport> {
    if variants.len() < 2 {
        return Err(Error::Config("LEE needs at least two variants".into()));
    }
    let (lfm, _) = prep.pretrained(BranchMode::Dual, DataFilter::All)?;
    let events = prep.online_ad(Task::Ctr);
    let n_proxy = LEE_PROXY_EVENTS.min(events.len());
    let seed = derive_seed(prep.seed, TAG_LEE);
    let proxy_baseline = lee_proxy_auc(&Tensor::filled(n_proxy, 1, 1.0), &events[..n_proxy], seed)?;
    let (mut proxy_seconds, mut full_seconds) = (0.0, 0.0);
    let mut rows = Vec::new();
    for &v in variants {
        let x = v.rows(&lfm, &events, seed ^ 0x5EED)?;
        let prefix: Vec<usize> = (0..n_proxy).collect();
        let clock = Instant::now();
        let proxy_auc = lee_proxy_auc(&x.gather_rows(&prefix), &events[..n_proxy], seed)?;
        proxy_seconds += clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let cfg = DownstreamConfig { fusion: FusionMode::Linear, cr_dim: x.cols(), seed, ..prep.config.downstream.clone() };
        let mut m = prep.downstream(cfg)?;
        let full_auc = progressive(&mut m, &events, &Upstream::cr(x), prep.config.online.batch_size)?.window_auc(prep.config.eval_window)?;
        full_seconds += clock.elapsed().as_secs_f64();
        rows.push(LeeRow { seed: prep.seed, variant: v, proxy_auc, full_auc });
    }
    Ok(LeeReport { rows, proxy_baseline, proxy_seconds, full_seconds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub seed: u64,
    pub trained: bool,
    pub k: usize,
    pub held_out: usize,
    pub recall: f64,
    /// `k / n_ad_items`.
    pub chance: f64,
}

/// Fraction of held-out `(user, ad)` positives whose ad ranks in the top `k`
/// of all ad items by adapted cosine.
pub fn recall_at_k(adapters: &RetrievalAdapters, lfm: &LfmModel, pairs: &[(usize, usize)], catalog: &[usize], k: usize) -> Result<f64> {
    if pairs.is_empty() || catalog.is_empty() || k == 0 {
        return Err(Error::Empty("retrieval evaluation"));
    }
    let items = adapters.adapter_v.forward(&lfm.item_repr(catalog)?)?;
    let users: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let us = adapters.adapter_u.forward(&lfm.user_repr(&users)?)?;
    let unit = |v: &[f64]| -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect()
    };
    let items: Vec<Vec<f64>> = (0..items.rows()).map(|r| unit(items.row(r))).collect();
    let mut hits = 0usize;
    for (row, &(_, target)) in pairs.iter().enumerate() {
        let u = unit(us.row(row));
        let score = |v: &Vec<f64>| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };
        let pos = catalog.iter().position(|&i| i == target).ok_or(Error::Lookup { kind: "item", id: target, vocab: catalog.len() })?;
        let s = score(&items[pos]);
        // Rank counts strictly better items; ties resolve in the target's favour.
        let better = items.iter().filter(|v| score(v) > s).count();
        hits += usize::from(better < k);
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Trains retrieval adapters with in-batch InfoNCE on frozen UR and IR of
/// ad positives (the pretraining stream plus the first 80% of the online
/// one), then measures recall@k on the remaining online positives.
/// `trained = false` scores the initial adapters.
pub fn retrieval_eval(prep: &mut Prepared, k: usize, trained: bool) -> Result<RetrievalReport> {
    let (lfm, _) = prep.pretrained(BranchMode::Dual, DataFilter::All)?;
    let is_pos = |e: &&Event| e.domain == Domain::Ad && e.is_positive();
    let online: Vec<Event> = prep.online.iter().filter(is_pos).copied().collect();
    let split = online.len() * 4 / 5;
    let (online_train, test) = online.split_at(split);
    if online_train.is_empty() || test.is_empty() {
        return Err(Error::Empty("retrieval positives"));
    }
    let mut train: Vec<Event> = prep.pretrain.iter().filter(is_pos).copied().collect();
    train.extend_from_slice(online_train);
    let rc = prep.config.retrieval.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(prep.seed, TAG_RETRIEVAL));
    let mut adapters = RetrievalAdapters::new(lfm.config.ur_dim, lfm.config.ir_dim, rc.hidden, rc.dim, rc.temperature, &mut rng)?;
    if trained {
        let mut opt = Adam::new(AdamConfig { lr: rc.lr, ..AdamConfig::default() });
        for _ in 0..rc.epochs {
            for batch in train.chunks(rc.batch.max(2)) {
                for p in adapters.params_mut() {
                    p.zero_grad();
                }
                adapters.infonce_backward(&ur_rows(&lfm, batch)?, &ir_rows(&lfm, batch)?)?;
                opt.step(adapters.params_mut())?;
            }
        }
    }
    let catalog: Vec<usize> = prep.world.ad_items().collect();
    let pairs: Vec<(usize, usize)> = test.iter().map(|e| (e.user_id, e.item_id)).collect();
    let recall = recall_at_k(&adapters, &lfm, &pairs, &catalog, k)?;
    Ok(RetrievalReport { seed: prep.seed, trained, k, held_out: pairs.len(), recall, chance: k.min(catalog.len()) as f64 / catalog.len() as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub seed: u64,
    /// An embedding block name, or `transferred` for every upstream input.
    pub block: String,
    pub auc_drop: f64,
}

fn block_name(b: Block) -> &'static str {
    match b {
        Block::UserId => "user_id",
        Block::UserSegment => "user_segment",
        Block::ItemId => "item_id",
        Block::ItemCategory => "item_category",
        Block::UserNoise => "user_noise",
    }
}

fn column_means(t: &Tensor) -> Vec<f64> {
    let mut m = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (a, v) in m.iter_mut().zip(t.row(r)) {
            *a += v;
        }
    }
    m.into_iter().map(|v| v / t.rows().max(1) as f64).collect()
}

fn constant_rows(t: &Tensor, rows: usize) -> Result<Tensor> {
    Tensor::from_rows(&vec![column_means(t); rows])
}

/// Trains a gated-fusion model (aggregated user CR plus UR and IR side
/// features, and a planted per-user field unrelated to labels) on the first
/// 70% of the online ad CTR events, then reports the AUC drop on the rest
/// when each input block is replaced by its training mean.
pub fn feature_importance(prep: &mut Prepared) -> Result<Vec<ImportanceRow>> {
    let (lfm, _) = prep.pretrained(BranchMode::Dual, DataFilter::All)?;
    let tap = lfm.config.penultimate_tap();
    let ads: Vec<Event> = prep.online.iter().filter(|e| e.domain == Domain::Ad).copied().collect();
    let (events, cr) = replay_user_cr(&lfm, &ads, tap, prep.tau)?;
    let up = Upstream::cr(cr).with_towers(ur_rows(&lfm, &events)?, ir_rows(&lfm, &events)?);
    let split = events.len() * 7 / 10;
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = ((0..split).collect(), (split..events.len()).collect());
    let (train, test) = events.split_at(split);
    let (train_up, test_up) = (up.gather_rows(&train_idx), up.gather_rows(&test_idx));

    let cfg = DownstreamConfig { fusion: FusionMode::Nonlinear, cr_dim: lfm.config.tap_dim(tap)?, tower_features: true, ..prep.config.downstream.clone() };
    let mut model = crate::transfer::DownstreamModel::with_user_noise(cfg, prep.features(), Some(prep.world.user_noise_feature.clone()))?;
    progressive(&mut model, train, &train_up, prep.config.online.batch_size)?;

    let labels: Vec<f64> = test.iter().map(|e| e.label).collect();
    let base = auc(&model.predict(test, &test_up)?, &labels)?;
    let mut rows = Vec::new();
    for (b, mean) in model.block_means(train)? {
        let masked = auc(&model.predict_masked(test, &test_up, b, &mean)?, &labels)?;
        rows.push(ImportanceRow { seed: prep.seed, block: block_name(b).into(), auc_drop: base - masked });
    }
    let n = test.len();
    let masked_up = Upstream {
        cr: Some(constant_rows(train_up.cr.as_ref().expect("cr"), n)?),
        ur: Some(constant_rows(train_up.ur.as_ref().expect("ur"), n)?),
        ir: Some(constant_rows(train_up.ir.as_ref().expect("ir"), n)?),
    };
    let masked = auc(&model.predict(test, &masked_up)?, &labels)?;
    rows.push(ImportanceRow { seed: prep.seed, block: "transferred".into(), auc_drop: base - masked });
    Ok(rows)
}
