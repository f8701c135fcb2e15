use rand::Rng;

use crate::error::{Error, Result};
use crate::nncore::{Activation, Linear, Mlp, Param, Parameterized, Tensor};

/// Two small adapters mapping UR and IR into a shared space scored by cosine.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalAdapters {
    pub adapter_u: Mlp,
    pub adapter_v: Mlp,
    pub temperature: f64,
}

impl RetrievalAdapters {
    pub fn new(ur_dim: usize, ir_dim: usize, hidden: usize, out: usize, temperature: f64, rng: &mut impl Rng) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(RetrievalAdapters {
            adapter_u: Mlp::new(&[ur_dim, hidden, out], Activation::Relu, false, rng),
            adapter_v: Mlp::new(&[ir_dim, hidden, out], Activation::Relu, false, rng),
            temperature,
        })
    }

    /// Single-layer identity adapters, mostly for testing.
    pub fn identity(dim: usize, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        let id = || Mlp {
            layers: vec![Linear::from_parts(Tensor::identity(dim), Tensor::zeros(1, dim)).expect("square")],
            activation: Activation::Relu,
            activate_last: false,
        };
        Ok(RetrievalAdapters { adapter_u: id(), adapter_v: id(), temperature })
    }

    /// Row-wise cosine of the adapted pairs.
    pub fn pair_scores(&self, ur: &Tensor, ir: &Tensor) -> Result<Vec<f64>> {
        let a = self.adapter_u.forward(ur)?;
        let b = self.adapter_v.forward(ir)?;
        if a.shape() != b.shape() {
            return Err(Error::Dimension(format!("adapted {:?} vs {:?}", a.shape(), b.shape())));
        }
        (0..a.rows()).map(|r| cosine(a.row(r), b.row(r))).collect()
    }

    /// In-batch InfoNCE over matched rows of `ur` and `ir`; accumulates
    /// parameter gradients and returns the loss.
    pub fn infonce_backward(&mut self, ur: &Tensor, ir: &Tensor) -> Result<f64> {
        let ta = self.adapter_u.trace(ur)?;
        let tb = self.adapter_v.trace(ir)?;
        let (an, a_norm) = normalize_rows(ta.output())?;
        let (bn, b_norm) = normalize_rows(tb.output())?;
        let scores = an.matmul_t(&bn)?;
        let (loss, g_scores) = infonce_with_grad(&scores, self.temperature)?;
        let g_an = g_scores.matmul(&bn)?;
        let g_bn = g_scores.t_matmul(&an)?;
        let g_a = normalize_backward(&an, &a_norm, &g_an);
        let g_b = normalize_backward(&bn, &b_norm, &g_bn);
        self.adapter_u.backward(&ta, &g_a)?;
        self.adapter_v.backward(&tb, &g_b)?;
        Ok(loss)
    }
}

impl Parameterized for RetrievalAdapters {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.adapter_u.params();
        p.extend(self.adapter_v.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.adapter_u.params_mut();
        p.extend(self.adapter_v.params_mut());
        p
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("temperature must be positive, got {t}")))
    }
}

const MIN_NORM: f64 = 1e-12;

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("cosine of {} and {} dims", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(Error::Degenerate("zero-norm vector in cosine".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn normalize_rows(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < MIN_NORM {
            return Err(Error::Degenerate("zero-norm adapted vector".into()));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Gradient of `x ↦ x/|x|` pulled back from the normalized side.
fn normalize_backward(xn: &Tensor, norms: &[f64], g: &Tensor) -> Tensor {
    let mut out = g.clone();
    for (r, &n) in norms.iter().enumerate() {
        let dot: f64 = xn.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
        for (o, &x) in out.row_mut(r).iter_mut().zip(xn.row(r)) {
            *o = (*o - x * dot) / n;
        }
    }
    out
}

/// Cosine of the adapted single pair `(ur, ir)`, both `1 × d`.
pub fn retrieval_score(ur: &Tensor, ir: &Tensor, adapters: &RetrievalAdapters) -> Result<f64> {
    Ok(adapters.pair_scores(ur, ir)?[0])
}

/// Mean over rows of `−log softmax(scores/T)` at the diagonal.
pub fn infonce_loss(scores: &Tensor, temperature: f64) -> Result<f64> {
    Ok(infonce_with_grad(scores, temperature)?.0)
}

pub fn infonce_with_grad(scores: &Tensor, temperature: f64) -> Result<(f64, Tensor)> {
    check_temperature(temperature)?;
    let n = scores.rows();
    if n == 0 || scores.cols() != n {
        return Err(Error::Dimension(format!("score matrix must be square and non-empty, got {:?}", scores.shape())));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(n, n);
    for r in 0..n {
        let z: Vec<f64> = scores.row(r).iter().map(|s| s / temperature).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        loss += m + sum.ln() - z[r];
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (z[c] - m).exp() / sum;
            *g = (p - f64::from(u8::from(c == r))) / (temperature * n as f64);
        }
    }
    Ok((loss / n as f64, grad))
}
