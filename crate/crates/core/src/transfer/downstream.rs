use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fuse::{apply_blocks, gate, FusionAdapter, GateTrace};
use super::retrieval::RetrievalAdapters;
use crate::error::{Error, Result};
use crate::lfm::{FeatureMap, MixTower, MixTrace};
use crate::nncore::{bce_with_logits, sigmoid, Activation, Adam, AdamConfig, Embedding, Linear, Mlp, MlpTrace, Param, Parameterized, Tensor};
use crate::simstream::Event;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    None,
    Linear,
    Nonlinear,
    Iim,
    Retrieval,
}

/// An embedding input block of a downstream model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    UserId,
    UserSegment,
    ItemId,
    ItemCategory,
    UserNoise,
}

/// Layer counts of an upstream mix tower, used to build its isomorphic copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IimShape {
    pub n_cross: usize,
    pub n_dnn: usize,
    pub hidden: usize,
}

impl IimShape {
    pub fn of(branch: &MixTower) -> Self {
        IimShape { n_cross: branch.cross.len(), n_dnn: branch.dnn.layers.len(), hidden: branch.hidden_dim() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub use_user_features: bool,
    pub fusion: FusionMode,
    pub gate_activation: Activation,
    pub per_block_gate: bool,
    /// Start the gate projection at zero so the first predictions match an
    /// unfused model's (with a scaled sigmoid gate).
    pub gate_zero_init: bool,
    /// Also append projections of `UR(u)` and `IR(i)` to the DNN input
    /// (linear, nonlinear and unfused modes).
    pub tower_features: bool,
    /// Width of the upstream vector fed to linear or nonlinear fusion.
    pub cr_dim: usize,
    /// Width of the appended block in linear fusion; `None` uses `embed_dim`.
    pub linear_dim: Option<usize>,
    pub ur_dim: usize,
    pub ir_dim: usize,
    pub iim: Option<IimShape>,
    pub aux_weight: f64,
    pub temperature: f64,
    pub retrieval_hidden: usize,
    pub retrieval_dim: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            embed_dim: 8,
            hidden: vec![32, 16],
            use_user_features: true,
            fusion: FusionMode::None,
            gate_activation: Activation::ScaledSigmoid,
            per_block_gate: false,
            gate_zero_init: true,
            tower_features: false,
            cr_dim: 0,
            linear_dim: None,
            ur_dim: 8,
            ir_dim: 8,
            iim: None,
            aux_weight: 0.3,
            temperature: 0.1,
            retrieval_hidden: 16,
            retrieval_dim: 8,
            adam: AdamConfig::default(),
            seed: 23,
        }
    }
}

/// Upstream tensors for one batch, row-aligned with its events. Only the
/// fields the model's fusion mode reads need to be present.
#[derive(Clone, Debug, Default)]
pub struct Upstream {
    pub cr: Option<Tensor>,
    pub ur: Option<Tensor>,
    pub ir: Option<Tensor>,
}

impl Upstream {
    pub fn none() -> Self {
        Upstream::default()
    }

    pub fn cr(cr: Tensor) -> Self {
        Upstream { cr: Some(cr), ..Upstream::default() }
    }

    pub fn towers(ur: Tensor, ir: Tensor) -> Self {
        Upstream { ur: Some(ur), ir: Some(ir), ..Upstream::default() }
    }

    pub fn with_towers(mut self, ur: Tensor, ir: Tensor) -> Self {
        self.ur = Some(ur);
        self.ir = Some(ir);
        self
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        Upstream {
            cr: self.cr.as_ref().map(|t| t.gather_rows(idx)),
            ur: self.ur.as_ref().map(|t| t.gather_rows(idx)),
            ir: self.ir.as_ref().map(|t| t.gather_rows(idx)),
        }
    }
}

/// A CTR model with its own embeddings and DNN that optionally consumes
/// upstream representations through one of the transfer mechanisms.
#[derive(Clone, Debug)]
pub struct DownstreamModel {
    pub config: DownstreamConfig,
    pub features: FeatureMap,
    pub user_id: Option<Embedding>,
    pub user_side: Option<Embedding>,
    pub item_id: Embedding,
    pub item_side: Embedding,
    /// Optional per-user categorical feature and its embedding, appended
    /// after the item blocks.
    pub user_noise: Option<(Vec<usize>, Embedding)>,
    /// `[x, hidden.., 1]`, ReLU, linear output.
    pub dnn: Mlp,
    pub adapter: Option<FusionAdapter>,
    pub iim: Option<MixTower>,
    pub retrieval: Option<RetrievalAdapters>,
    /// Projections of the UR and IR side features.
    pub tower_projections: Option<(Param, Param)>,
    optimizer: Adam,
}

struct Trace {
    users: Vec<usize>,
    user_sides: Vec<usize>,
    items: Vec<usize>,
    item_sides: Vec<usize>,
    noise: Vec<usize>,
    e: Tensor,
    cr: Option<Tensor>,
    towers: Option<(Tensor, Tensor)>,
    gate: Option<GateTrace>,
    iim: Option<MixTrace>,
    dnn: MlpTrace,
}

fn need<'a>(t: &'a Option<Tensor>, what: &str, rows: usize, cols: usize) -> Result<&'a Tensor> {
    let t = t.as_ref().ok_or_else(|| Error::Config(format!("fusion mode needs upstream {what}")))?;
    if t.shape() != (rows, cols) {
        return Err(Error::Dimension(format!("upstream {what} is {:?}, expected {:?}", t.shape(), (rows, cols))));
    }
    Ok(t)
}

impl DownstreamModel {
    /// Base embeddings and DNN are drawn before any adapter, so a model
    /// differs from its unwired counterpart only where the fusion demands.
    pub fn new(config: DownstreamConfig, features: FeatureMap) -> Result<Self> {
        Self::with_user_noise(config, features, None)
    }

    /// As [`Self::new`], plus an extra embedded user field whose per-user
    /// values are `noise`.
    pub fn with_user_noise(config: DownstreamConfig, features: FeatureMap, noise: Option<Vec<usize>>) -> Result<Self> {
        let e = config.embed_dim;
        if e == 0 || config.hidden.contains(&0) {
            return Err(Error::Config("downstream dims must be >= 1".into()));
        }
        if !(config.aux_weight >= 0.0) {
            return Err(Error::Config("aux_weight must be non-negative".into()));
        }
        let n_segments = features.user_segment.iter().max().map_or(1, |m| m + 1);
        let n_categories = features.item_category.iter().max().map_or(1, |m| m + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (user_id, user_side) = if config.use_user_features {
            (
                Some(Embedding::new("down.user_id", features.user_segment.len(), e, &mut rng)),
                Some(Embedding::new("down.user_segment", n_segments, e, &mut rng)),
            )
        } else {
            (None, None)
        };
        let item_id = Embedding::new("down.item_id", features.item_category.len(), e, &mut rng);
        let item_side = Embedding::new("down.item_category", n_categories, e, &mut rng);
        let user_noise = match noise {
            Some(values) => {
                if values.len() != features.user_segment.len() {
                    return Err(Error::Dimension(format!("{} noise values for {} users", values.len(), features.user_segment.len())));
                }
                let vocab = values.iter().max().map_or(1, |m| m + 1);
                Some((values, Embedding::new("down.user_noise", vocab, e, &mut rng)))
            }
            None => None,
        };
        let n_fields = if config.use_user_features { 4 } else { 2 } + usize::from(user_noise.is_some());
        let e_width = n_fields * e;

        let needs_cr = matches!(config.fusion, FusionMode::Linear | FusionMode::Nonlinear);
        if config.linear_dim == Some(0) {
            return Err(Error::Config("linear_dim must be >= 1".into()));
        }
        if needs_cr && config.cr_dim == 0 {
            return Err(Error::Config("linear and nonlinear fusion need cr_dim >= 1".into()));
        }
        let iim_shape = match config.fusion {
            FusionMode::Iim => Some(config.iim.ok_or_else(|| Error::Config("iim fusion needs an iim shape".into()))?),
            _ => None,
        };
        if config.tower_features && matches!(config.fusion, FusionMode::Iim | FusionMode::Retrieval) {
            return Err(Error::Config("tower_features applies to unfused, linear and nonlinear models".into()));
        }
        let side_width = if config.tower_features { config.linear_dim.unwrap_or(e) } else { 0 };
        let x_width = e_width
            + 2 * side_width
            + match config.fusion {
                FusionMode::Linear => config.linear_dim.unwrap_or(e),
                FusionMode::Iim => iim_shape.expect("checked").hidden,
                _ => 0,
            };
        let mut dims = vec![x_width];
        dims.extend(&config.hidden);
        dims.push(1);
        let dnn = Mlp::new(&dims, Activation::Relu, false, &mut rng);

        let adapter = match config.fusion {
            FusionMode::Linear => Some(FusionAdapter::new(config.cr_dim, config.linear_dim.unwrap_or(e), Activation::Sigmoid, &mut rng)),
            FusionMode::Nonlinear => {
                let width = if config.per_block_gate { e_width } else { e };
                let mut a = FusionAdapter::new(config.cr_dim, width, config.gate_activation, &mut rng);
                if config.gate_zero_init {
                    a.projection.value = Tensor::zeros(config.cr_dim, width);
                }
                Some(a)
            }
            _ => None,
        };
        let iim = iim_shape.map(|s| MixTower::new(config.ur_dim + config.ir_dim, s.n_cross, s.n_dnn, s.hidden, &mut rng));
        let retrieval = match config.fusion {
            FusionMode::Retrieval => Some(RetrievalAdapters::new(
                config.ur_dim,
                config.ir_dim,
                config.retrieval_hidden,
                config.retrieval_dim,
                config.temperature,
                &mut rng,
            )?),
            _ => None,
        };
        let tower_projections = config.tower_features.then(|| {
            let u = Linear::new(config.ur_dim, side_width, &mut rng).weight;
            (u, Linear::new(config.ir_dim, side_width, &mut rng).weight)
        });
        Ok(DownstreamModel {
            optimizer: Adam::new(config.adam),
            config,
            features,
            user_id,
            user_side,
            item_id,
            item_side,
            user_noise,
            dnn,
            adapter,
            iim,
            retrieval,
            tower_projections,
        })
    }

    pub fn fusion(&self) -> FusionMode {
        self.config.fusion
    }

    fn sides(&self, events: &[Event]) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>)> {
        let mut out = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for ev in events {
            let seg = *self.features.user_segment.get(ev.user_id).ok_or(Error::Lookup {
                kind: "user",
                id: ev.user_id,
                vocab: self.features.user_segment.len(),
            })?;
            let cat = *self.features.item_category.get(ev.item_id).ok_or(Error::Lookup {
                kind: "item",
                id: ev.item_id,
                vocab: self.features.item_category.len(),
            })?;
            out.0.push(ev.user_id);
            out.1.push(seg);
            out.2.push(ev.item_id);
            out.3.push(cat);
        }
        Ok(out)
    }

    /// Embedding blocks in input order.
    pub fn blocks(&self) -> Vec<Block> {
        let mut b = Vec::new();
        if self.user_id.is_some() {
            b.extend([Block::UserId, Block::UserSegment]);
        }
        b.extend([Block::ItemId, Block::ItemCategory]);
        if self.user_noise.is_some() {
            b.push(Block::UserNoise);
        }
        b
    }

    /// Mean embedding of each block over `events`.
    pub fn block_means(&self, events: &[Event]) -> Result<Vec<(Block, Vec<f64>)>> {
        if events.is_empty() {
            return Err(Error::Empty("block mean events"));
        }
        let t = self.trace(events, &self.zero_upstream(events.len()), None)?;
        let d = self.config.embed_dim;
        let n = events.len() as f64;
        Ok(self
            .blocks()
            .into_iter()
            .enumerate()
            .map(|(k, b)| {
                let mut m = vec![0.0; d];
                for r in 0..t.e.rows() {
                    for (acc, v) in m.iter_mut().zip(&t.e.row(r)[k * d..(k + 1) * d]) {
                        *acc += v;
                    }
                }
                (b, m.into_iter().map(|v| v / n).collect())
            })
            .collect())
    }

    fn zero_upstream(&self, n: usize) -> Upstream {
        let c = &self.config;
        let needs_cr = matches!(c.fusion, FusionMode::Linear | FusionMode::Nonlinear);
        let needs_towers = c.tower_features || c.fusion == FusionMode::Iim;
        Upstream {
            cr: needs_cr.then(|| Tensor::zeros(n, c.cr_dim)),
            ur: needs_towers.then(|| Tensor::zeros(n, c.ur_dim)),
            ir: needs_towers.then(|| Tensor::zeros(n, c.ir_dim)),
        }
    }

    /// Click probabilities with one embedding block replaced by `value`
    /// for every row.
    pub fn predict_masked(&self, events: &[Event], up: &Upstream, block: Block, value: &[f64]) -> Result<Vec<f64>> {
        if self.retrieval.is_some() {
            return Err(Error::Config("retrieval models have no embedding blocks".into()));
        }
        let k = self
            .blocks()
            .iter()
            .position(|&b| b == block)
            .ok_or_else(|| Error::Config(format!("model has no {block:?} block")))?;
        if value.len() != self.config.embed_dim {
            return Err(Error::Dimension(format!("mask of width {} for blocks of {}", value.len(), self.config.embed_dim)));
        }
        if events.is_empty() {
            return Ok(Vec::new());
        }
        let t = self.trace(events, up, Some((k, value)))?;
        Ok(t.dnn.output().data().iter().map(|&z| sigmoid(z)).collect())
    }

    fn trace(&self, events: &[Event], up: &Upstream, mask: Option<(usize, &[f64])>) -> Result<Trace> {
        let n = events.len();
        let (users, user_sides, items, item_sides) = self.sides(events)?;
        let mut parts = Vec::new();
        if let (Some(uid), Some(useg)) = (&self.user_id, &self.user_side) {
            parts.push(uid.lookup(&users)?);
            parts.push(useg.lookup(&user_sides)?);
        }
        parts.push(self.item_id.lookup(&items)?);
        parts.push(self.item_side.lookup(&item_sides)?);
        let mut noise = Vec::new();
        if let Some((values, emb)) = &self.user_noise {
            noise = users.iter().map(|&u| values[u]).collect();
            parts.push(emb.lookup(&noise)?);
        }
        if let Some((k, value)) = mask {
            for r in 0..n {
                parts[k].row_mut(r).copy_from_slice(value);
            }
        }
        let e = Tensor::concat_cols(&parts.iter().collect::<Vec<_>>())?;

        let (mut cr, mut gate_trace, mut iim_trace) = (None, None, None);
        let x = match self.config.fusion {
            FusionMode::None | FusionMode::Retrieval => e.clone(),
            FusionMode::Linear => {
                let c = need(&up.cr, "cr", n, self.config.cr_dim)?.clone();
                let adapter = self.adapter.as_ref().expect("built with adapter");
                let p = c.matmul(&adapter.projection.value)?;
                cr = Some(c);
                Tensor::concat_cols(&[&e, &p])?
            }
            FusionMode::Nonlinear => {
                let c = need(&up.cr, "cr", n, self.config.cr_dim)?.clone();
                let g = gate(&c, self.adapter.as_ref().expect("built with adapter"))?;
                let fused = apply_blocks(&e, &g.gate)?;
                cr = Some(c);
                gate_trace = Some(g);
                fused
            }
            FusionMode::Iim => {
                let ur = need(&up.ur, "ur", n, self.config.ur_dim)?;
                let ir = need(&up.ir, "ir", n, self.config.ir_dim)?;
                let t = self.iim.as_ref().expect("built with iim").trace(&Tensor::concat_cols(&[ur, ir])?)?;
                let x = Tensor::concat_cols(&[&e, t.dnn_output()])?;
                iim_trace = Some(t);
                x
            }
        };
        let (x, towers) = match &self.tower_projections {
            Some((pu, pi)) => {
                let u = need(&up.ur, "ur", n, self.config.ur_dim)?.clone();
                let i = need(&up.ir, "ir", n, self.config.ir_dim)?.clone();
                (Tensor::concat_cols(&[&x, &u.matmul(&pu.value)?, &i.matmul(&pi.value)?])?, Some((u, i)))
            }
            None => (x, None),
        };
        let dnn = self.dnn.trace(&x)?;
        Ok(Trace { users, user_sides, items, item_sides, noise, e, cr, towers, gate: gate_trace, iim: iim_trace, dnn })
    }

    fn retrieval_pairs<'a>(&self, up: &'a Upstream, n: usize) -> Result<(&'a Tensor, &'a Tensor)> {
        Ok((need(&up.ur, "ur", n, self.config.ur_dim)?, need(&up.ir, "ir", n, self.config.ir_dim)?))
    }

    /// Click probabilities. Retrieval mode maps the adapted cosine into
    /// `[0, 1]` instead.
    pub fn predict(&self, events: &[Event], up: &Upstream) -> Result<Vec<f64>> {
        if events.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(r) = &self.retrieval {
            let (ur, ir) = self.retrieval_pairs(up, events.len())?;
            return Ok(r.pair_scores(ur, ir)?.into_iter().map(|c| 0.5 * (1.0 + c)).collect());
        }
        let t = self.trace(events, up, None)?;
        Ok(t.dnn.output().data().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Predictions of the isomorphic module's own head.
    pub fn predict_aux(&self, events: &[Event], up: &Upstream) -> Result<Vec<f64>> {
        if self.iim.is_none() {
            return Err(Error::Config("model has no isomorphic module".into()));
        }
        let t = self.trace(events, up, None)?;
        Ok(t.iim.expect("iim mode").logits.data().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Main BCE, plus `λ·` auxiliary BCE in iim mode, or in-batch InfoNCE over
    /// positives in retrieval mode.
    pub fn loss(&self, events: &[Event], up: &Upstream) -> Result<f64> {
        let mut probe = self.clone();
        probe.compute_gradients(events, up)
    }

    /// Accumulates gradients of [`Self::loss`] into every owned parameter.
    pub fn compute_gradients(&mut self, events: &[Event], up: &Upstream) -> Result<f64> {
        if events.is_empty() {
            return Err(Error::Empty("downstream batch"));
        }
        self.zero_grad();
        if self.retrieval.is_some() {
            let pos: Vec<usize> = events.iter().enumerate().filter(|(_, e)| e.is_positive()).map(|(i, _)| i).collect();
            if pos.is_empty() {
                return Ok(0.0);
            }
            let (ur, ir) = self.retrieval_pairs(up, events.len())?;
            let (ur, ir) = (ur.gather_rows(&pos), ir.gather_rows(&pos));
            return self.retrieval.as_mut().expect("checked").infonce_backward(&ur, &ir);
        }
        let labels: Vec<f64> = events.iter().map(|e| e.label).collect();
        let t = self.trace(events, up, None)?;
        let (mut loss, g_logit) = bce_with_logits(t.dnn.output(), &labels)?;
        let mut gx = self.dnn.backward(&t.dnn, &g_logit)?;
        if let (Some((pu, pi)), Some((u, i))) = (self.tower_projections.as_mut(), &t.towers) {
            let w = pu.value.cols();
            let split = gx.cols() - 2 * w;
            pu.grad.add_assign(&u.t_matmul(&gx.slice_cols(split, split + w)?)?)?;
            pi.grad.add_assign(&i.t_matmul(&gx.slice_cols(split + w, gx.cols())?)?)?;
            gx = gx.slice_cols(0, split)?;
        }
        let e_width = t.e.cols();
        let mut g_e = gx.slice_cols(0, e_width)?;
        match self.config.fusion {
            FusionMode::Linear => {
                let g_p = gx.slice_cols(e_width, gx.cols())?;
                let cr = t.cr.as_ref().expect("linear trace");
                let adapter = self.adapter.as_mut().expect("linear adapter");
                adapter.projection.grad.add_assign(&cr.t_matmul(&g_p)?)?;
            }
            FusionMode::Nonlinear => {
                let g = t.gate.as_ref().expect("nonlinear trace");
                let w = g.gate.cols();
                let mut g_gate = Tensor::zeros(g.gate.rows(), w);
                for r in 0..g_e.rows() {
                    for k in 0..e_width {
                        let upstream = g_e.get(r, k);
                        g_gate.row_mut(r)[k % w] += upstream * t.e.get(r, k);
                    }
                }
                g_e = apply_blocks(&g_e, &g.gate)?;
                let adapter = self.adapter.as_mut().expect("nonlinear adapter");
                let g_pre = adapter.activation.backward(&g.pre, &g.gate, &g_gate)?;
                adapter.projection.grad.add_assign(&t.cr.as_ref().expect("nonlinear trace").t_matmul(&g_pre)?)?;
            }
            FusionMode::Iim => {
                let it = t.iim.as_ref().expect("iim trace");
                let g_crp = gx.slice_cols(e_width, gx.cols())?;
                let (aux, g_aux) = bce_with_logits(&it.logits, &labels)?;
                loss += self.config.aux_weight * aux;
                let g_aux = g_aux.scale(self.config.aux_weight);
                self.iim.as_mut().expect("iim").backward(it, &g_aux, Some(&g_crp))?;
            }
            FusionMode::None | FusionMode::Retrieval => {}
        }
        let mut off = 0;
        let d = self.config.embed_dim;
        let mut next = |m: &mut Embedding, ids: &[usize]| -> Result<()> {
            m.backward(ids, &g_e.slice_cols(off, off + d)?);
            off += d;
            Ok(())
        };
        if let (Some(uid), Some(useg)) = (self.user_id.as_mut(), self.user_side.as_mut()) {
            next(uid, &t.users)?;
            next(useg, &t.user_sides)?;
        }
        next(&mut self.item_id, &t.items)?;
        next(&mut self.item_side, &t.item_sides)?;
        if let Some((_, emb)) = self.user_noise.as_mut() {
            next(emb, &t.noise)?;
        }
        Ok(loss)
    }

    /// One Adam step on the downstream-owned parameters; returns the
    /// pre-step loss.
    pub fn train_step(&mut self, events: &[Event], up: &Upstream) -> Result<f64> {
        let loss = self.compute_gradients(events, up)?;
        let mut opt = std::mem::replace(&mut self.optimizer, Adam::new(self.config.adam));
        let res = opt.step(self.params_mut());
        self.optimizer = opt;
        res?;
        Ok(loss)
    }
}

/// Free-function form of [`DownstreamModel::train_step`].
pub fn downstream_train_step(model: &mut DownstreamModel, events: &[Event], up: &Upstream) -> Result<f64> {
    model.train_step(events, up)
}

impl Parameterized for DownstreamModel {
    fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        if let (Some(a), Some(b)) = (&self.user_id, &self.user_side) {
            p.extend(a.params());
            p.extend(b.params());
        }
        p.extend(self.item_id.params());
        p.extend(self.item_side.params());
        if let Some((_, emb)) = &self.user_noise {
            p.extend(emb.params());
        }
        p.extend(self.dnn.params());
        if let Some(a) = &self.adapter {
            p.push(&a.projection);
        }
        if let Some(m) = &self.iim {
            p.extend(m.params());
        }
        if let Some(r) = &self.retrieval {
            p.extend(r.params());
        }
        if let Some((u, i)) = &self.tower_projections {
            p.push(u);
            p.push(i);
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = Vec::new();
        if let (Some(a), Some(b)) = (self.user_id.as_mut(), self.user_side.as_mut()) {
            p.extend(a.params_mut());
            p.extend(b.params_mut());
        }
        p.extend(self.item_id.params_mut());
        p.extend(self.item_side.params_mut());
        if let Some((_, emb)) = self.user_noise.as_mut() {
            p.extend(emb.params_mut());
        }
        p.extend(self.dnn.params_mut());
        if let Some(a) = self.adapter.as_mut() {
            p.push(&mut a.projection);
        }
        if let Some(m) = self.iim.as_mut() {
            p.extend(m.params_mut());
        }
        if let Some(r) = self.retrieval.as_mut() {
            p.extend(r.params_mut());
        }
        if let Some((u, i)) = self.tower_projections.as_mut() {
            p.push(u);
            p.push(i);
        }
        p
    }
}
