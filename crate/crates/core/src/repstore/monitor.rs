use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Population statistics over every scalar in a batch of vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorStats {
    pub mean: f64,
    pub variance: f64,
    /// Mean per-vector L1 norm.
    pub l1_norm: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mean,
    Variance,
    L1Norm,
    Min,
    Max,
    NonFinite,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Metric::Mean => "mean",
            Metric::Variance => "variance",
            Metric::L1Norm => "l1_norm",
            Metric::Min => "min",
            Metric::Max => "max",
            Metric::NonFinite => "non_finite",
        };
        f.write_str(s)
    }
}

pub const EPSILON: f64 = 1e-9;
pub const DEFAULT_THRESHOLD: f64 = 3.0;

pub fn monitor_stats<'a>(batch: impl IntoIterator<Item = &'a [f64]>) -> Result<MonitorStats> {
    let (mut n, mut vectors) = (0usize, 0usize);
    let (mut sum, mut sum_sq, mut l1) = (0.0, 0.0, 0.0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in batch {
        vectors += 1;
        for &x in v {
            if !x.is_finite() {
                return Err(Error::Numeric(format!("monitoring batch contains {x}")));
            }
            n += 1;
            sum += x;
            sum_sq += x * x;
            l1 += x.abs();
            min = min.min(x);
            max = max.max(x);
        }
    }
    if n == 0 {
        return Err(Error::Empty("monitoring batch"));
    }
    let mean = sum / n as f64;
    let variance = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok(MonitorStats { mean, variance, l1_norm: l1 / vectors as f64, min: min.min(mean), max: max.max(mean) })
}

/// Relative change of every metric, in [`Metric`] order.
///
/// Scale metrics (variance, L1) use `|prev| + ε` as the denominator. Location
/// metrics (mean, min, max) add the previous standard deviation to it: a
/// location near zero otherwise turns sampling noise into huge ratios.
pub fn relative_changes(prev: &MonitorStats, curr: &MonitorStats) -> [(Metric, f64); 5] {
    let sd = prev.variance.sqrt();
    let loc = |p: f64, c: f64| (c - p).abs() / (p.abs() + sd + EPSILON);
    let scale = |p: f64, c: f64| (c - p).abs() / (p.abs() + EPSILON);
    [
        (Metric::Mean, loc(prev.mean, curr.mean)),
        (Metric::Variance, scale(prev.variance, curr.variance)),
        (Metric::L1Norm, scale(prev.l1_norm, curr.l1_norm)),
        (Metric::Min, loc(prev.min, curr.min)),
        (Metric::Max, loc(prev.max, curr.max)),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Live,
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenReason {
    pub metric: Metric,
    pub change: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreStatus {
    pub mode: Mode,
    pub frozen_reason: Option<FrozenReason>,
}

impl StoreStatus {
    pub const LIVE: StoreStatus = StoreStatus { mode: Mode::Live, frozen_reason: None };

    pub fn frozen(metric: Metric, change: f64) -> Self {
        StoreStatus { mode: Mode::Frozen, frozen_reason: Some(FrozenReason { metric, change }) }
    }

    pub fn is_frozen(&self) -> bool {
        self.mode == Mode::Frozen
    }
}

/// Freezes on the first metric whose relative change exceeds `threshold`.
pub fn check_and_freeze(prev: &MonitorStats, curr: &MonitorStats, threshold: f64) -> StoreStatus {
    for (metric, change) in relative_changes(prev, curr) {
        if change > threshold {
            return StoreStatus::frozen(metric, change);
        }
    }
    StoreStatus::LIVE
}
