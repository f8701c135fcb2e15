use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nncore::{Activation, CrossLayer, Linear, Mlp, MlpTrace, Param, Parameterized, Tensor};

/// Interaction stack shared by the foundation model's branches and the
/// downstream isomorphic module: DCN-V2 cross layers, a ReLU DNN and a
/// single-logit head.
#[derive(Clone, Debug, PartialEq)]
pub struct MixTower {
    pub cross: Vec<CrossLayer>,
    pub dnn: Mlp,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct MixTrace {
    pub x0: Tensor,
    /// Output of each cross layer.
    pub cross_out: Vec<Tensor>,
    pub dnn: MlpTrace,
    /// `n × 1`
    pub logits: Tensor,
}

impl MixTrace {
    /// Output of the last DNN layer.
    pub fn dnn_output(&self) -> &Tensor {
        self.dnn.output()
    }
}

/// One layer of a structural fingerprint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerShape {
    pub kind: &'static str,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl MixTower {
    pub fn new(input_dim: usize, n_cross: usize, n_dnn: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let cross = (0..n_cross).map(|_| CrossLayer::new(input_dim, rng)).collect();
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(hidden, n_dnn));
        let dnn = Mlp::new(&dims, Activation::Relu, true, rng);
        let head = Linear::new(hidden, 1, rng);
        MixTower { cross, dnn, head }
    }

    pub fn input_dim(&self) -> usize {
        self.dnn.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.dnn.out_dim()
    }

    pub fn trace(&self, x0: &Tensor) -> Result<MixTrace> {
        let mut cross_out: Vec<Tensor> = Vec::with_capacity(self.cross.len());
        for layer in &self.cross {
            let xl = cross_out.last().unwrap_or(x0);
            cross_out.push(layer.forward(x0, xl)?);
        }
        let dnn = self.dnn.trace(cross_out.last().unwrap_or(x0))?;
        let logits = self.head.forward(dnn.output())?;
        Ok(MixTrace { x0: x0.clone(), cross_out, dnn, logits })
    }

    /// Backpropagates gradients arriving at the logits and, optionally, at the
    /// DNN output; returns the gradient with respect to `x0`.
    pub fn backward(&mut self, trace: &MixTrace, grad_logits: &Tensor, grad_dnn_out: Option<&Tensor>) -> Result<Tensor> {
        let mut grad_h = self.head.backward(trace.dnn.output(), grad_logits)?;
        if let Some(extra) = grad_dnn_out {
            grad_h.add_assign(extra)?;
        }
        let mut grad_xl = self.dnn.backward(&trace.dnn, &grad_h)?;
        let mut grad_x0 = Tensor::zeros(trace.x0.rows(), trace.x0.cols());
        for l in (0..self.cross.len()).rev() {
            let xl = if l == 0 { &trace.x0 } else { &trace.cross_out[l - 1] };
            let (g0, gl) = self.cross[l].backward(&trace.x0, xl, &grad_xl)?;
            grad_x0.add_assign(&g0)?;
            grad_xl = gl;
        }
        grad_x0.add_assign(&grad_xl)?;
        Ok(grad_x0)
    }

    /// Layer kinds and shapes, in forward order.
    pub fn fingerprint(&self) -> Vec<LayerShape> {
        let mut out: Vec<LayerShape> =
            self.cross.iter().map(|c| LayerShape { kind: "cross", in_dim: c.dim(), out_dim: c.dim() }).collect();
        out.extend(self.dnn.layers.iter().map(|l| LayerShape { kind: "dense_relu", in_dim: l.in_dim(), out_dim: l.out_dim() }));
        out.push(LayerShape { kind: "head", in_dim: self.head.in_dim(), out_dim: self.head.out_dim() });
        out
    }
}

impl Parameterized for MixTower {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.cross.iter().flat_map(Parameterized::params).collect();
        p.extend(self.dnn.params());
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.cross.iter_mut().flat_map(Parameterized::params_mut).collect();
        p.extend(self.dnn.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}
