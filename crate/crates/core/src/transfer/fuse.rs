use rand::Rng;

use crate::error::{Error, Result};
use crate::nncore::{Activation, Linear, Param, Tensor};

/// `σ(·M)` applied to an upstream vector to produce a gate over downstream
/// embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionAdapter {
    /// `d × d'`
    pub projection: Param,
    pub activation: Activation,
}

impl FusionAdapter {
    pub fn new(cr_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        FusionAdapter { projection: Linear::new(cr_dim, out_dim, rng).weight, activation }
    }

    pub fn from_projection(projection: Tensor, activation: Activation) -> Self {
        FusionAdapter { projection: Param::new(projection), activation }
    }

    pub fn in_dim(&self) -> usize {
        self.projection.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.value.cols()
    }
}

/// Pre-activation and gate values of one fused batch.
#[derive(Clone, Debug)]
pub struct GateTrace {
    pub pre: Tensor,
    pub gate: Tensor,
}

pub(crate) fn gate(cr: &Tensor, adapter: &FusionAdapter) -> Result<GateTrace> {
    if cr.cols() != adapter.in_dim() {
        return Err(Error::Dimension(format!("adapter expects {} inputs, got {}", adapter.in_dim(), cr.cols())));
    }
    let pre = cr.matmul(&adapter.projection.value)?;
    let gate = adapter.activation.forward(&pre);
    Ok(GateTrace { pre, gate })
}

/// Multiplies each `g.cols()`-wide block of `e` by `g`, row by row.
pub(crate) fn apply_blocks(e: &Tensor, g: &Tensor) -> Result<Tensor> {
    let w = g.cols();
    if e.rows() != g.rows() || w == 0 || e.cols() % w != 0 {
        return Err(Error::Dimension(format!("gate {:?} does not tile embeddings {:?}", g.shape(), e.shape())));
    }
    let mut out = e.clone();
    for r in 0..e.rows() {
        let gr = g.row(r);
        for (k, x) in out.row_mut(r).iter_mut().enumerate() {
            *x *= gr[k % w];
        }
    }
    Ok(out)
}

/// `E' = E ⊙ σ(cr·M)`. When the gate is narrower than `E` it is shared by
/// every embedding block; when it is as wide as `E` each block gets its own.
pub fn nonlinear_fuse(e: &Tensor, cr: &Tensor, adapter: &FusionAdapter) -> Result<Tensor> {
    if e.rows() != cr.rows() {
        return Err(Error::Dimension(format!("{} embedding rows vs {} upstream rows", e.rows(), cr.rows())));
    }
    apply_blocks(e, &gate(cr, adapter)?.gate)
}

/// `[E, cr·M]`
pub fn linear_fuse(e: &Tensor, cr: &Tensor, projection: &Tensor) -> Result<Tensor> {
    if e.rows() != cr.rows() {
        return Err(Error::Dimension(format!("{} embedding rows vs {} upstream rows", e.rows(), cr.rows())));
    }
    Tensor::concat_cols(&[e, &cr.matmul(projection)?])
}
