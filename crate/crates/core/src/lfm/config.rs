use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    /// Separate mix towers for content and ad samples.
    Dual,
    /// One mix tower shared by both domains.
    Same,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LfmConfig {
    pub user_vocab: usize,
    pub item_vocab: usize,
    pub user_segments: usize,
    pub item_categories: usize,
    pub embed_dim: usize,
    pub tower_hidden: usize,
    pub ur_dim: usize,
    pub ir_dim: usize,
    pub n_cross_layers: usize,
    pub n_dnn_layers: usize,
    pub dnn_hidden: usize,
    pub branch_mode: BranchMode,
    pub seed: u64,
}

impl Default for LfmConfig {
    fn default() -> Self {
        LfmConfig {
            user_vocab: 1500,
            item_vocab: 1200,
            user_segments: 8,
            item_categories: 8,
            embed_dim: 8,
            tower_hidden: 32,
            ur_dim: 8,
            ir_dim: 8,
            n_cross_layers: 2,
            n_dnn_layers: 2,
            dnn_hidden: 32,
            branch_mode: BranchMode::Dual,
            seed: 11,
        }
    }
}

impl LfmConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("user_vocab", self.user_vocab),
            ("item_vocab", self.item_vocab),
            ("user_segments", self.user_segments),
            ("item_categories", self.item_categories),
            ("embed_dim", self.embed_dim),
            ("tower_hidden", self.tower_hidden),
            ("ur_dim", self.ur_dim),
            ("ir_dim", self.ir_dim),
            ("dnn_hidden", self.dnn_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("lfm: {name} must be at least 1")));
        }
        if self.n_dnn_layers < 2 {
            return Err(Error::Config(format!("lfm: n_dnn_layers must be at least 2, got {}", self.n_dnn_layers)));
        }
        Ok(())
    }

    /// Width of the mix-tower input `UR ‖ IR`.
    pub fn cross_dim(&self) -> usize {
        self.ur_dim + self.ir_dim
    }

    /// Width of the concatenated feature embeddings.
    pub fn embed_concat_dim(&self) -> usize {
        4 * self.embed_dim
    }

    /// Every tap this configuration exposes, shallowest first.
    pub fn taps(&self) -> Vec<TapName> {
        let mut taps = vec![TapName::embed_concat()];
        taps.extend((0..self.n_cross_layers).map(TapName::cross));
        taps.extend((0..self.n_dnn_layers).map(TapName::dnn));
        taps
    }

    pub fn tap_dim(&self, tap: TapName) -> Result<usize> {
        self.check_tap(tap)?;
        Ok(match tap.kind {
            TapKind::EmbedConcat => self.embed_concat_dim(),
            TapKind::Cross => self.cross_dim(),
            TapKind::Dnn => self.dnn_hidden,
        })
    }

    pub fn check_tap(&self, tap: TapName) -> Result<()> {
        let ok = match tap.kind {
            TapKind::EmbedConcat => tap.layer_index == 0,
            TapKind::Cross => tap.layer_index < self.n_cross_layers,
            TapKind::Dnn => tap.layer_index < self.n_dnn_layers,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Tap(format!("{tap} does not exist in this model")))
        }
    }

    /// The last hidden DNN layer, the one feeding the prediction head.
    pub fn penultimate_tap(&self) -> TapName {
        TapName::dnn(self.n_dnn_layers - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapKind {
    EmbedConcat,
    Cross,
    Dnn,
}

/// A named activation inside the model that can be extracted as a
/// representation: `embed_concat`, `cross/<l>` or `dnn/<l>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TapName {
    pub kind: TapKind,
    pub layer_index: usize,
}

impl TapName {
    pub fn embed_concat() -> Self {
        TapName { kind: TapKind::EmbedConcat, layer_index: 0 }
    }

    pub fn cross(layer_index: usize) -> Self {
        TapName { kind: TapKind::Cross, layer_index }
    }

    pub fn dnn(layer_index: usize) -> Self {
        TapName { kind: TapKind::Dnn, layer_index }
    }
}

impl fmt::Display for TapName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TapKind::EmbedConcat => f.write_str("embed_concat"),
            TapKind::Cross => write!(f, "cross/{}", self.layer_index),
            TapKind::Dnn => write!(f, "dnn/{}", self.layer_index),
        }
    }
}

impl FromStr for TapName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "embed_concat" {
            return Ok(TapName::embed_concat());
        }
        let (kind, idx) = s.split_once('/').ok_or_else(|| Error::Tap(format!("unrecognized tap {s:?}")))?;
        let layer_index = idx.parse().map_err(|_| Error::Tap(format!("bad layer index in {s:?}")))?;
        match kind {
            "cross" => Ok(TapName::cross(layer_index)),
            "dnn" => Ok(TapName::dnn(layer_index)),
            _ => Err(Error::Tap(format!("unrecognized tap kind in {s:?}"))),
        }
    }
}

impl Serialize for TapName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TapName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
