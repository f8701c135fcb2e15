//! Time-decayed moving average that folds sample-level cross
//! representations into user-level and item-level ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Tensor;

/// `β(dt) = exp(−dt/τ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaFn {
    pub tau: f64,
}

impl BetaFn {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive and finite, got {tau}")));
        }
        Ok(BetaFn { tau })
    }

    pub fn beta(&self, dt: f64) -> Result<f64> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::Domain(format!("beta needs dt > 0, got {dt}")));
        }
        Ok((-dt / self.tau).exp())
    }
}

/// Free-function form of [`BetaFn::beta`].
pub fn beta(f: &BetaFn, dt: f64) -> Result<f64> {
    f.beta(dt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggState {
    pub value: Tensor,
    pub last_update: f64,
}

/// Folds `new_cr` observed at `now` into `state`.
///
/// A missing state is a cold start and takes `new_cr` verbatim. Two updates
/// at the same instant (`dt = 0`) are treated as the `dt → 0+` limit, so the
/// existing value is kept.
pub fn update_cr(state: Option<&AggState>, new_cr: &Tensor, now: f64, f: &BetaFn) -> Result<AggState> {
    if !new_cr.is_finite() {
        return Err(Error::Numeric("cross representation".into()));
    }
    let Some(prev) = state else {
        return Ok(AggState { value: new_cr.clone(), last_update: now });
    };
    if now < prev.last_update {
        return Err(Error::Clock { now, last: prev.last_update });
    }
    if prev.value.shape() != new_cr.shape() {
        return Err(Error::Dimension(format!("aggregate {:?} vs new {:?}", prev.value.shape(), new_cr.shape())));
    }
    let dt = now - prev.last_update;
    let b = if dt == 0.0 { 1.0 } else { f.beta(dt)? };
    let value = prev.value.zip_with(new_cr, |old, new| b * old + (1.0 - b) * new)?;
    Ok(AggState { value, last_update: now })
}

/// Reference fold over a timestamp-sorted update list.
pub fn aggregate_oracle(updates: &[(Tensor, f64)], f: &BetaFn) -> Result<Tensor> {
    if updates.is_empty() {
        return Err(Error::Empty("update list"));
    }
    if let Some(pos) = updates.windows(2).position(|w| w[1].1 < w[0].1) {
        return Err(Error::Order(pos + 1));
    }
    let mut state: Option<AggState> = None;
    for (cr, t) in updates {
        state = Some(update_cr(state.as_ref(), cr, *t, f)?);
    }
    Ok(state.expect("non-empty").value)
}
