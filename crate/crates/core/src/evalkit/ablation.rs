use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pipeline::{progressive, ur_rows, DataFilter, Prepared};
use crate::error::{Error, Result};
use crate::lfm::BranchMode;
use crate::repstore::{Store, StoreConfig};
use crate::simstream::{run_online_loop, LoopConfig, ServedModel, Task, TransferInput};
use crate::transfer::{DownstreamConfig, FusionMode, Upstream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    SumSameBranch,
    SumDualBranch,
    Lfm4adsLinear,
    Lfm4adsNoAgg,
    Lfm4ads,
}

impl Arm {
    pub const ALL: [Arm; 6] = [Arm::Baseline, Arm::SumSameBranch, Arm::SumDualBranch, Arm::Lfm4adsLinear, Arm::Lfm4adsNoAgg, Arm::Lfm4ads];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::SumSameBranch => "sum_same_branch",
            Arm::SumDualBranch => "sum_dual_branch",
            Arm::Lfm4adsLinear => "lfm4ads_linear",
            Arm::Lfm4adsNoAgg => "lfm4ads_no_agg",
            Arm::Lfm4ads => "lfm4ads",
        }
    }

    /// Upstream branch mode, what is transferred, how it is fused, and
    /// whether CR is aggregated in the store.
    pub fn wiring(self) -> (BranchMode, TransferInput, FusionMode, bool) {
        match self {
            Arm::Baseline => (BranchMode::Dual, TransferInput::None, FusionMode::None, true),
            Arm::SumSameBranch => (BranchMode::Same, TransferInput::Ur, FusionMode::Linear, true),
            Arm::SumDualBranch => (BranchMode::Dual, TransferInput::Ur, FusionMode::Linear, true),
            Arm::Lfm4adsLinear => (BranchMode::Dual, TransferInput::TowersAndCr, FusionMode::Linear, true),
            Arm::Lfm4adsNoAgg => (BranchMode::Dual, TransferInput::TowersAndCr, FusionMode::Nonlinear, false),
            Arm::Lfm4ads => (BranchMode::Dual, TransferInput::TowersAndCr, FusionMode::Nonlinear, true),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| Error::Config(format!("unknown ablation arm {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub seed: u64,
    pub arm: Arm,
    pub auc: f64,
    pub freezes: usize,
}

fn transfer_width(prep: &Prepared, input: TransferInput, loop_cfg: &LoopConfig) -> Result<usize> {
    let lfm = &prep.config.lfm;
    let tap = loop_cfg.cr_tap.unwrap_or_else(|| lfm.penultimate_tap());
    let cr = lfm.tap_dim(tap)? * if loop_cfg.include_cr_item { 2 } else { 1 };
    Ok(match input {
        TransferInput::None | TransferInput::Towers => 0,
        TransferInput::Ur => lfm.ur_dim,
        TransferInput::Cr => cr,
        TransferInput::UrCr => lfm.ur_dim + cr,
        TransferInput::TowersAndCr => cr,
    })
}

/// The served model, store and loop settings an arm runs with.
#[derive(Clone, Debug)]
pub struct ArmSetup {
    pub served: ServedModel,
    pub store: StoreConfig,
    pub loop_config: LoopConfig,
}

pub fn arm_setup(prep: &Prepared, arm: Arm) -> Result<ArmSetup> {
    let (_, input, fusion, aggregate) = arm.wiring();
    let store = StoreConfig { aggregate_cr: aggregate, ..prep.config.store };
    // The full arms read item-level CR next to user-level CR.
    let full = input == TransferInput::TowersAndCr;
    let loop_config = LoopConfig { include_cr_item: full || prep.config.online.include_cr_item, ..prep.config.online.clone() };
    let cfg = DownstreamConfig {
        fusion,
        cr_dim: transfer_width(prep, input, &loop_config)?,
        tower_features: full,
        ..prep.config.downstream.clone()
    };
    let served = ServedModel { name: arm.name().into(), task: Task::Ctr, input, model: prep.downstream(cfg)? };
    Ok(ArmSetup { served, store, loop_config })
}

/// One arm end to end: pretrained foundation model, online loop with the
/// store, and the arm's downstream CTR model; AUC over the trailing window.
pub fn run_arm(prep: &mut Prepared, arm: Arm) -> Result<ArmResult> {
    let (mut lfm, mut opt) = prep.pretrained(arm.wiring().0, DataFilter::All)?;
    let setup = arm_setup(prep, arm)?;
    let mut store = Store::new(setup.store)?;
    let mut models = [setup.served];
    let log = run_online_loop(&mut lfm, &mut opt, &mut models, &mut store, &prep.online, &setup.loop_config)?;
    Ok(ArmResult { seed: prep.seed, arm, auc: log.final_auc(0, prep.config.eval_window)?, freezes: log.freezes.len() })
}

pub fn run_ablation(prep: &mut Prepared, arms: &[Arm]) -> Result<Vec<ArmResult>> {
    arms.iter().map(|&a| run_arm(prep, a)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossDomainVariant {
    /// No user features and no transfer.
    Baseline,
    ContentOnly,
    AdOnly,
    Combined,
}

impl CrossDomainVariant {
    pub const ALL: [CrossDomainVariant; 4] =
        [CrossDomainVariant::Baseline, CrossDomainVariant::ContentOnly, CrossDomainVariant::AdOnly, CrossDomainVariant::Combined];

    pub fn name(self) -> &'static str {
        match self {
            CrossDomainVariant::Baseline => "baseline",
            CrossDomainVariant::ContentOnly => "content_only",
            CrossDomainVariant::AdOnly => "ads_only",
            CrossDomainVariant::Combined => "combined",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainResult {
    pub seed: u64,
    pub variant: CrossDomainVariant,
    pub auc: f64,
}

/// Downstream ad CTR without user features, given a linear projection of UR
/// from foundation models pretrained on content only, ads only, or both.
pub fn cross_domain_ablation(prep: &mut Prepared) -> Result<Vec<CrossDomainResult>> {
    let events = prep.online_ad(Task::Ctr);
    let batch = prep.config.online.batch_size;
    let mut out = Vec::new();
    for variant in CrossDomainVariant::ALL {
        let filter = match variant {
            CrossDomainVariant::Baseline => None,
            CrossDomainVariant::ContentOnly => Some(DataFilter::ContentOnly),
            CrossDomainVariant::AdOnly => Some(DataFilter::AdOnly),
            CrossDomainVariant::Combined => Some(DataFilter::All),
        };
        let base = DownstreamConfig { use_user_features: false, ..prep.config.downstream.clone() };
        let (cfg, up) = match filter {
            None => (DownstreamConfig { fusion: FusionMode::None, ..base }, Upstream::none()),
            Some(f) => {
                let (lfm, _) = prep.pretrained(BranchMode::Dual, f)?;
                let cfg = DownstreamConfig { fusion: FusionMode::Linear, cr_dim: lfm.config.ur_dim, ..base };
                (cfg, Upstream::cr(ur_rows(&lfm, &events)?))
            }
        };
        let mut model = prep.downstream(cfg)?;
        let acc = progressive(&mut model, &events, &up, batch)?;
        out.push(CrossDomainResult { seed: prep.seed, variant, auc: acc.window_auc(prep.config.eval_window)? });
    }
    Ok(out)
}
