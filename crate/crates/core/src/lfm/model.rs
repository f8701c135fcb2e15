use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{BranchMode, LfmConfig, TapKind, TapName};
use super::mix::{MixTower, MixTrace};
use crate::error::{Error, Result};
use crate::nncore::{bce_with_logits, sigmoid, Activation, Adam, Embedding, Mlp, MlpTrace, Param, Parameterized, Tensor};
use crate::simstream::{Domain, Event, World};

/// Categorical side features attached to each id: the user's segment and
/// the item's category.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub user_segment: Vec<usize>,
    pub item_category: Vec<usize>,
}

impl FeatureMap {
    pub fn from_world(world: &World) -> Self {
        FeatureMap { user_segment: world.user_segment.clone(), item_category: world.item_category.clone() }
    }
}

/// Id embedding plus side-feature embedding followed by a dense stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    pub id_embedding: Embedding,
    pub side_embedding: Embedding,
    pub mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct TowerTrace {
    ids: Vec<usize>,
    sides: Vec<usize>,
    /// `[id embedding ‖ side embedding]`
    pub embedded: Tensor,
    pub mlp: MlpTrace,
}

impl Tower {
    fn new(name: (&'static str, &'static str), vocab: usize, sides: usize, cfg: &LfmConfig, out: usize, rng: &mut impl Rng) -> Self {
        Tower {
            id_embedding: Embedding::new(name.0, vocab, cfg.embed_dim, rng),
            side_embedding: Embedding::new(name.1, sides, cfg.embed_dim, rng),
            mlp: Mlp::new(&[2 * cfg.embed_dim, cfg.tower_hidden, out], Activation::Relu, false, rng),
        }
    }

    fn trace(&self, ids: &[usize], sides: Vec<usize>) -> Result<TowerTrace> {
        let a = self.id_embedding.lookup(ids)?;
        let b = self.side_embedding.lookup(&sides)?;
        let embedded = Tensor::concat_cols(&[&a, &b])?;
        let mlp = self.mlp.trace(&embedded)?;
        Ok(TowerTrace { ids: ids.to_vec(), sides, embedded, mlp })
    }

    fn backward(&mut self, trace: &TowerTrace, grad_out: &Tensor) -> Result<()> {
        let grad_emb = self.mlp.backward(&trace.mlp, grad_out)?;
        let d = self.id_embedding.dim();
        self.id_embedding.backward(&trace.ids, &grad_emb.slice_cols(0, d)?);
        self.side_embedding.backward(&trace.sides, &grad_emb.slice_cols(d, 2 * d)?);
        Ok(())
    }
}

impl Parameterized for Tower {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.id_embedding.params();
        p.extend(self.side_embedding.params());
        p.extend(self.mlp.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.id_embedding.params_mut();
        p.extend(self.side_embedding.params_mut());
        p.extend(self.mlp.params_mut());
        p
    }
}

/// Triple-tower foundation model: shared user and item towers feeding one
/// mix tower per domain (dual mode) or a single shared one (same mode).
#[derive(Clone, Debug, PartialEq)]
pub struct LfmModel {
    pub config: LfmConfig,
    pub features: FeatureMap,
    pub user_tower: Tower,
    pub item_tower: Tower,
    /// `[content, ad]` in dual mode, `[shared]` in same mode.
    pub branches: Vec<MixTower>,
}

/// Result of a single-pair forward pass.
#[derive(Clone, Debug)]
pub struct LfmOutputs {
    pub prediction: f64,
    pub ur: Tensor,
    pub ir: Tensor,
    pub taps: BTreeMap<TapName, Tensor>,
}

/// Full forward state for a batch, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct LfmTrace {
    pub user: TowerTrace,
    pub item: TowerTrace,
    pub x0: Tensor,
    /// `(branch index, batch rows routed there, branch trace)`
    groups: Vec<(usize, Vec<usize>, MixTrace)>,
    pub logits: Vec<f64>,
}

/// Builds a model with deterministic parameters drawn from `config.seed`.
/// Towers are drawn before branches, so towers match across branch modes.
pub fn build_lfm(config: &LfmConfig, features: FeatureMap) -> Result<LfmModel> {
    config.validate()?;
    if features.user_segment.len() != config.user_vocab || features.item_category.len() != config.item_vocab {
        return Err(Error::Config(format!(
            "feature map covers {} users / {} items, config has {} / {}",
            features.user_segment.len(),
            features.item_category.len(),
            config.user_vocab,
            config.item_vocab
        )));
    }
    if features.user_segment.iter().any(|&s| s >= config.user_segments)
        || features.item_category.iter().any(|&c| c >= config.item_categories)
    {
        return Err(Error::Config("feature map value exceeds its cardinality".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let user_tower = Tower::new(("user", "user_segment"), config.user_vocab, config.user_segments, config, config.ur_dim, &mut rng);
    let item_tower = Tower::new(("item", "item_category"), config.item_vocab, config.item_categories, config, config.ir_dim, &mut rng);
    let n_branches = match config.branch_mode {
        BranchMode::Dual => 2,
        BranchMode::Same => 1,
    };
    let branches = (0..n_branches)
        .map(|_| MixTower::new(config.cross_dim(), config.n_cross_layers, config.n_dnn_layers, config.dnn_hidden, &mut rng))
        .collect();
    Ok(LfmModel { config: config.clone(), features, user_tower, item_tower, branches })
}

impl LfmModel {
    pub fn branch_index(&self, domain: Domain) -> usize {
        match (self.config.branch_mode, domain) {
            (BranchMode::Same, _) | (BranchMode::Dual, Domain::Content) => 0,
            (BranchMode::Dual, Domain::Ad) => 1,
        }
    }

    pub fn branch(&self, domain: Domain) -> &MixTower {
        &self.branches[self.branch_index(domain)]
    }

    fn user_sides(&self, users: &[usize]) -> Result<Vec<usize>> {
        users
            .iter()
            .map(|&u| {
                self.features.user_segment.get(u).copied().ok_or(Error::Lookup { kind: "user", id: u, vocab: self.config.user_vocab })
            })
            .collect()
    }

    fn item_sides(&self, items: &[usize]) -> Result<Vec<usize>> {
        items
            .iter()
            .map(|&i| {
                self.features.item_category.get(i).copied().ok_or(Error::Lookup { kind: "item", id: i, vocab: self.config.item_vocab })
            })
            .collect()
    }

    /// User representations, one row per id.
    pub fn user_repr(&self, users: &[usize]) -> Result<Tensor> {
        Ok(self.user_tower.trace(users, self.user_sides(users)?)?.mlp.output().clone())
    }

    /// Item representations, one row per id.
    pub fn item_repr(&self, items: &[usize]) -> Result<Tensor> {
        Ok(self.item_tower.trace(items, self.item_sides(items)?)?.mlp.output().clone())
    }

    pub fn trace(&self, users: &[usize], items: &[usize], domains: &[Domain]) -> Result<LfmTrace> {
        if users.len() != items.len() || users.len() != domains.len() {
            return Err(Error::Dimension("users, items and domains must have equal length".into()));
        }
        let user = self.user_tower.trace(users, self.user_sides(users)?)?;
        let item = self.item_tower.trace(items, self.item_sides(items)?)?;
        let x0 = Tensor::concat_cols(&[user.mlp.output(), item.mlp.output()])?;
        let mut rows_by_branch: Vec<Vec<usize>> = vec![Vec::new(); self.branches.len()];
        for (r, &d) in domains.iter().enumerate() {
            rows_by_branch[self.branch_index(d)].push(r);
        }
        let mut logits = vec![0.0; users.len()];
        let mut groups = Vec::new();
        for (b, rows) in rows_by_branch.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let mix = self.branches[b].trace(&x0.gather_rows(&rows))?;
            for (k, &r) in rows.iter().enumerate() {
                logits[r] = mix.logits.get(k, 0);
            }
            groups.push((b, rows, mix));
        }
        Ok(LfmTrace { user, item, x0, groups, logits })
    }

    /// Accumulates parameter gradients for `∂loss/∂logit = grad_logits`.
    pub fn backward(&mut self, trace: &LfmTrace, grad_logits: &[f64]) -> Result<()> {
        let mut grad_x0 = Tensor::zeros(trace.x0.rows(), trace.x0.cols());
        for (b, rows, mix) in &trace.groups {
            let g = Tensor::from_vec(rows.len(), 1, rows.iter().map(|&r| grad_logits[r]).collect())?;
            let gx = self.branches[*b].backward(mix, &g, None)?;
            for (k, &r) in rows.iter().enumerate() {
                grad_x0.row_mut(r).copy_from_slice(gx.row(k));
            }
        }
        let ur = self.config.ur_dim;
        self.user_tower.backward(&trace.user, &grad_x0.slice_cols(0, ur)?)?;
        self.item_tower.backward(&trace.item, &grad_x0.slice_cols(ur, trace.x0.cols())?)?;
        Ok(())
    }

    /// Single-pair inference routed through the branch for `domain`, with
    /// every tap of that branch filled in.
    pub fn forward(&self, user: usize, item: usize, domain: Domain) -> Result<LfmOutputs> {
        let trace = self.trace(&[user], &[item], &[domain])?;
        let (_, _, mix) = &trace.groups[0];
        let mut taps = BTreeMap::new();
        taps.insert(TapName::embed_concat(), Tensor::concat_cols(&[&trace.user.embedded, &trace.item.embedded])?);
        for (l, t) in mix.cross_out.iter().enumerate() {
            taps.insert(TapName::cross(l), t.clone());
        }
        for (l, t) in mix.dnn.post.iter().enumerate() {
            taps.insert(TapName::dnn(l), t.clone());
        }
        Ok(LfmOutputs {
            prediction: sigmoid(trace.logits[0]),
            ur: trace.user.mlp.output().clone(),
            ir: trace.item.mlp.output().clone(),
            taps,
        })
    }

    /// Ad-branch activation at `tap` for each `(user, item)` pair.
    pub fn extract_batch(&self, users: &[usize], items: &[usize], tap: TapName) -> Result<Tensor> {
        self.config.check_tap(tap)?;
        let trace = self.trace(users, items, &vec![Domain::Ad; users.len()])?;
        if tap.kind == TapKind::EmbedConcat {
            return Tensor::concat_cols(&[&trace.user.embedded, &trace.item.embedded]);
        }
        let Some((_, _, mix)) = trace.groups.first() else {
            return Ok(Tensor::zeros(0, self.config.tap_dim(tap)?));
        };
        Ok(match tap.kind {
            TapKind::Cross => mix.cross_out[tap.layer_index].clone(),
            TapKind::Dnn => mix.dnn.post[tap.layer_index].clone(),
            TapKind::EmbedConcat => unreachable!(),
        })
    }

    /// Sample-level cross representation `CR(u, i)` from the ad branch.
    pub fn extract_cr(&self, user: usize, item: usize, tap: TapName) -> Result<Tensor> {
        self.extract_batch(&[user], &[item], tap)
    }

    /// Mean BCE over the batch.
    pub fn loss(&self, events: &[Event]) -> Result<f64> {
        let (users, items, domains, labels) = unpack(events);
        let trace = self.trace(&users, &items, &domains)?;
        let logits = Tensor::from_vec(labels.len(), 1, trace.logits)?;
        Ok(bce_with_logits(&logits, &labels)?.0)
    }

    /// Zeroes gradients, then fills them with `∂(mean BCE)/∂θ`; returns the loss.
    pub fn compute_gradients(&mut self, events: &[Event]) -> Result<f64> {
        if events.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        self.zero_grad();
        let (users, items, domains, labels) = unpack(events);
        let trace = self.trace(&users, &items, &domains)?;
        let logits = Tensor::from_vec(labels.len(), 1, trace.logits.clone())?;
        let (loss, grad) = bce_with_logits(&logits, &labels)?;
        self.backward(&trace, grad.data())?;
        Ok(loss)
    }

    /// One optimizer step on the batch; returns the pre-step mean loss.
    pub fn train_step(&mut self, optimizer: &mut Adam, events: &[Event]) -> Result<f64> {
        let loss = self.compute_gradients(events)?;
        optimizer.step(self.params_mut())?;
        Ok(loss)
    }

    /// Dotted parameter names in parameter order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (tower, label) in [(&self.user_tower, "user_tower"), (&self.item_tower, "item_tower")] {
            names.push(format!("{label}.id_embedding"));
            names.push(format!("{label}.side_embedding"));
            for l in 0..tower.mlp.layers.len() {
                names.push(format!("{label}.mlp.{l}.weight"));
                names.push(format!("{label}.mlp.{l}.bias"));
            }
        }
        let branch_labels: &[&str] = match self.config.branch_mode {
            BranchMode::Dual => &["content_branch", "ad_branch"],
            BranchMode::Same => &["shared_branch"],
        };
        for (b, label) in self.branches.iter().zip(branch_labels) {
            for l in 0..b.cross.len() {
                names.push(format!("{label}.cross.{l}.weight"));
                names.push(format!("{label}.cross.{l}.bias"));
            }
            for l in 0..b.dnn.layers.len() {
                names.push(format!("{label}.dnn.{l}.weight"));
                names.push(format!("{label}.dnn.{l}.bias"));
            }
            names.push(format!("{label}.head.weight"));
            names.push(format!("{label}.head.bias"));
        }
        names
    }
}

fn unpack(events: &[Event]) -> (Vec<usize>, Vec<usize>, Vec<Domain>, Vec<f64>) {
    let users = events.iter().map(|e| e.user_id).collect();
    let items = events.iter().map(|e| e.item_id).collect();
    let domains = events.iter().map(|e| e.domain).collect();
    let labels = events.iter().map(|e| e.label).collect();
    (users, items, domains, labels)
}

impl Parameterized for LfmModel {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.user_tower.params();
        p.extend(self.item_tower.params());
        for b in &self.branches {
            p.extend(b.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.user_tower.params_mut();
        p.extend(self.item_tower.params_mut());
        for b in &mut self.branches {
            p.extend(b.params_mut());
        }
        p
    }
}
