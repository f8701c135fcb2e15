use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.rows(), value.cols());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns trainable parameters. Parameter order is stable and is
/// what optimizers and checkpoints key on.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// All parameter values flattened in parameter order.
    fn flat_values(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// All gradients flattened in parameter order.
    fn flat_grads(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.grad.data().iter().copied()).collect()
    }

    fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

/// Fully connected layer `y = x·W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::new(xavier_uniform(in_dim, out_dim, rng)),
            bias: Param::new(Tensor::zeros(1, out_dim)),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::Dimension(format!(
                "bias {}x{} for weight {}x{}",
                bias.rows(),
                bias.cols(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Linear { weight: Param::new(weight), bias: Param::new(bias) })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension(format!("linear expects {} inputs, got {}", self.in_dim(), x.cols())));
        }
        let mut y = x.matmul(&self.weight.value)?;
        y.add_row_broadcast(&self.bias.value)?;
        Ok(y)
    }

    /// Accumulates parameter gradients given the forward input `x`; returns
    /// the gradient with respect to `x`.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        self.weight.grad.add_assign(&x.t_matmul(grad_out)?)?;
        self.bias.grad.add_assign(&grad_out.sum_rows())?;
        grad_out.matmul_t(&self.weight.value)
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// DCN-V2 cross layer: `x_{l+1} = x0 ⊙ (x_l·W + b) + x_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossLayer {
    pub weight: Param,
    pub bias: Param,
}

impl CrossLayer {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        CrossLayer {
            weight: Param::new(xavier_uniform(dim, dim, rng)),
            bias: Param::new(Tensor::zeros(1, dim)),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rows() != weight.cols() {
            return Err(Error::Dimension(format!("cross weight must be square, got {}x{}", weight.rows(), weight.cols())));
        }
        if bias.shape() != (1, weight.cols()) {
            return Err(Error::Dimension(format!("cross bias {}x{} for dim {}", bias.rows(), bias.cols(), weight.cols())));
        }
        Ok(CrossLayer { weight: Param::new(weight), bias: Param::new(bias) })
    }

    pub fn dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, x0: &Tensor, xl: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if x0.cols() != d || xl.cols() != d || x0.rows() != xl.rows() {
            return Err(Error::Dimension(format!(
                "cross layer of dim {d} given x0 {}x{} and xl {}x{}",
                x0.rows(),
                x0.cols(),
                xl.rows(),
                xl.cols()
            )));
        }
        let mut z = xl.matmul(&self.weight.value)?;
        z.add_row_broadcast(&self.bias.value)?;
        let mut out = x0.hadamard(&z)?;
        out.add_assign(xl)?;
        Ok(out)
    }

    /// Returns `(∂/∂x0, ∂/∂xl)`.
    pub fn backward(&mut self, x0: &Tensor, xl: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut z = xl.matmul(&self.weight.value)?;
        z.add_row_broadcast(&self.bias.value)?;
        let grad_x0 = grad_out.hadamard(&z)?;
        let grad_z = grad_out.hadamard(x0)?;
        self.weight.grad.add_assign(&xl.t_matmul(&grad_z)?)?;
        self.bias.grad.add_assign(&grad_z.sum_rows())?;
        let mut grad_xl = grad_z.matmul_t(&self.weight.value)?;
        grad_xl.add_assign(grad_out)?;
        Ok((grad_x0, grad_xl))
    }
}

impl Parameterized for CrossLayer {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Trainable lookup table, one row per id.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub table: Param,
    name: &'static str,
}

impl Embedding {
    /// Rows drawn from N(0, 0.01²).
    pub fn new(name: &'static str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        let data = (0..vocab * dim).map(|_| normal.sample(rng)).collect();
        Embedding { table: Param::new(Tensor::from_vec(vocab, dim, data).expect("sized")), name }
    }

    pub fn from_table(name: &'static str, table: Tensor) -> Self {
        Embedding { table: Param::new(table), name }
    }

    pub fn vocab(&self) -> usize {
        self.table.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    pub fn lookup(&self, ids: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab()) {
            return Err(Error::Lookup { kind: self.name, id: bad, vocab: self.vocab() });
        }
        Ok(self.table.value.gather_rows(ids))
    }

    pub fn backward(&mut self, ids: &[usize], grad_out: &Tensor) {
        let dim = self.dim();
        for (r, &id) in ids.iter().enumerate() {
            let g = grad_out.row(r);
            let row = &mut self.table.grad.data_mut()[id * dim..(id + 1) * dim];
            for (a, b) in row.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

impl Parameterized for Embedding {
    fn params(&self) -> Vec<&Param> {
        vec![&self.table]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.table]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    /// `2σ(x)`: equals 1 at 0, so a zero pre-activation passes inputs through.
    ScaledSigmoid,
    Relu,
}

/// Overflow-free logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::ScaledSigmoid => 2.0 * sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }

    /// Gradient through the activation, given its input and output.
    pub fn backward(self, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Sigmoid => {
                let local = output.map(|s| s * (1.0 - s));
                grad_out.hadamard(&local)
            }
            Activation::ScaledSigmoid => {
                let local = output.map(|s| s * (1.0 - 0.5 * s));
                grad_out.hadamard(&local)
            }
            Activation::Relu => grad_out.zip_with(input, |g, x| if x > 0.0 { g } else { 0.0 }),
        }
    }
}

/// Intermediate values of an [`Mlp`] forward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub input: Tensor,
    /// Pre-activation output of each layer.
    pub pre: Vec<Tensor>,
    /// Post-activation output of each layer (equal to `pre` where no
    /// activation is applied).
    pub post: Vec<Tensor>,
}

impl MlpTrace {
    pub fn output(&self) -> &Tensor {
        self.post.last().unwrap_or(&self.input)
    }
}

/// Stack of linear layers with an activation after each hidden layer and
/// optionally after the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn new(dims: &[usize], activation: Activation, activate_last: bool, rng: &mut impl Rng) -> Self {
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Mlp { layers, activation, activate_last }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    fn activated(&self, idx: usize) -> bool {
        idx + 1 < self.layers.len() || self.activate_last
    }

    pub fn trace(&self, x: &Tensor) -> Result<MlpTrace> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = post.last().unwrap_or(x);
            let z = layer.forward(input)?;
            let a = if self.activated(i) { self.activation.forward(&z) } else { z.clone() };
            pre.push(z);
            post.push(a);
        }
        Ok(MlpTrace { input: x.clone(), pre, post })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.trace(x)?.output().clone())
    }

    pub fn backward(&mut self, trace: &MlpTrace, grad_out: &Tensor) -> Result<Tensor> {
        let mut grad = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                grad = self.activation.backward(&trace.pre[i], &trace.post[i], &grad)?;
            }
            let input = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            grad = self.layers[i].backward(input, &grad)?;
        }
        Ok(grad)
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Parameterized::params).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Parameterized::params_mut).collect()
    }
}

/// Mean binary cross-entropy on logits and its gradient with respect to the
/// logits. `logits` is `n × 1`.
pub fn bce_with_logits(logits: &Tensor, labels: &[f64]) -> Result<(f64, Tensor)> {
    if logits.cols() != 1 || logits.rows() != labels.len() {
        return Err(Error::Dimension(format!("{}x{} logits for {} labels", logits.rows(), logits.cols(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.rows(), 1);
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.get(i, 0);
        // softplus(z) - y·z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        grad.set(i, 0, (sigmoid(z) - y) / n);
    }
    Ok((loss / n, grad))
}
