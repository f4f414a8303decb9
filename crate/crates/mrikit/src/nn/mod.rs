//! Layer building blocks over the gradient graph: parameter storage, convs,
//! norms, linear layers, dropout and transformer pieces.

use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ops::attention::scaled_dot_attention;
use crate::tensor::{GradGraph, Value};
use crate::{Result, Tensor};

/// Train/eval switch; dropout and batch-norm statistics differ between the
/// two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Ordered, named parameter storage. Order is the checkpoint blob order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> usize {
        tensor.requires_grad = true;
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Bind every parameter into the graph, in storage order.
    pub fn bind(&self, g: &mut GradGraph) -> Vec<Value> {
        self.tensors.iter().map(|t| g.leaf(t)).collect()
    }
}

/// He-normal initialization for rectifier convs.
fn conv_init(rng: &mut impl Rng, c_out: usize, c_in: usize, k: usize) -> Tensor {
    let std = (2.0 / (c_in * k * k) as f32).sqrt();
    Tensor::randn(&[c_out, c_in, k, k], std, rng)
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), conv_init(rng, c_out, c_in, k));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Conv2dLayer { weight, bias, stride, pad }
    }

    pub fn forward(&self, g: &mut GradGraph, bound: &[Value], x: Value) -> Result<Value> {
        g.conv2d(x, bound[self.weight], Some(bound[self.bias]), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2dLayer {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2dLayer {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / (c_in * k * k) as f32).sqrt();
        let weight = params.add(format!("{name}.weight"), Tensor::randn(&[c_in, c_out, k, k], std, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        ConvTranspose2dLayer { weight, bias, stride, pad }
    }

    pub fn forward(&self, g: &mut GradGraph, bound: &[Value], x: Value) -> Result<Value> {
        g.conv_transpose2d(x, bound[self.weight], Some(bound[self.bias]), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / (d_in + d_out) as f32).sqrt();
        let weight = params.add(format!("{name}.weight"), Tensor::randn(&[d_in, d_out], std, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Linear { weight, bias }
    }

    /// Final scoring layers start near zero so untrained probabilities sit
    /// near one half instead of saturating the sigmoid.
    pub fn new_head(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), Tensor::randn(&[d_in, d_out], 0.02, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Linear { weight, bias }
    }

    /// x (rows, d_in) -> (rows, d_out)
    pub fn forward(&self, g: &mut GradGraph, bound: &[Value], x: Value) -> Result<Value> {
        let h = g.matmul(x, bound[self.weight])?;
        g.row_bias(h, bound[self.bias])
    }
}

pub const NORM_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Batch norm with running statistics (biased batch variance, momentum 0.1).
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: usize,
    pub beta: usize,
    running_mean: RefCell<Vec<f32>>,
    running_var: RefCell<Vec<f32>>,
}

impl BatchNorm2d {
    pub fn new(params: &mut ParamSet, name: &str, c: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::filled(&[c], 1.0));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[c]));
        BatchNorm2d {
            gamma,
            beta,
            running_mean: RefCell::new(vec![0.0; c]),
            running_var: RefCell::new(vec![1.0; c]),
        }
    }

    pub fn forward(&self, g: &mut GradGraph, bound: &[Value], x: Value, phase: Phase) -> Result<Value> {
        match phase {
            Phase::Train => {
                let (v, mean, var) =
                    g.batch_norm_train(x, bound[self.gamma], bound[self.beta], NORM_EPS)?;
                let mut rm = self.running_mean.borrow_mut();
                let mut rv = self.running_var.borrow_mut();
                for c in 0..rm.len() {
                    rm[c] = (1.0 - BN_MOMENTUM) * rm[c] + BN_MOMENTUM * mean[c];
                    rv[c] = (1.0 - BN_MOMENTUM) * rv[c] + BN_MOMENTUM * var[c];
                }
                Ok(v)
            }
            Phase::Eval => {
                let rm = self.running_mean.borrow();
                let rv = self.running_var.borrow();
                g.batch_norm_eval(x, bound[self.gamma], bound[self.beta], &rm, &rv, NORM_EPS)
            }
        }
    }

    pub fn running_state(&self) -> (Vec<f32>, Vec<f32>) {
        (self.running_mean.borrow().clone(), self.running_var.borrow().clone())
    }

    pub fn set_running_state(&self, mean: Vec<f32>, var: Vec<f32>) {
        *self.running_mean.borrow_mut() = mean;
        *self.running_var.borrow_mut() = var;
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNorm2d {
    pub gamma: usize,
    pub beta: usize,
}

impl InstanceNorm2d {
    pub fn new(params: &mut ParamSet, name: &str, c: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::filled(&[c], 1.0));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[c]));
        InstanceNorm2d { gamma, beta }
    }

    pub fn forward(&self, g: &mut GradGraph, bound: &[Value], x: Value) -> Result<Value> {
        g.instance_norm(x, bound[self.gamma], bound[self.beta], NORM_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNormLayer {
    pub fn new(params: &mut ParamSet, name: &str, d: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::filled(&[d], 1.0));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[d]));
        LayerNormLayer { gamma, beta }
    }

    pub fn forward(&self, g: &mut GradGraph, bound: &[Value], x: Value) -> Result<Value> {
        g.layer_norm(x, bound[self.gamma], bound[self.beta], NORM_EPS)
    }
}

/// Inverted-scaling dropout: identity in eval phase.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f32,
}

impl Dropout {
    pub fn forward(
        &self,
        g: &mut GradGraph,
        x: Value,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Value> {
        match phase {
            Phase::Train => g.dropout(x, self.rate, rng),
            Phase::Eval => Ok(x),
        }
    }
}

/// Multi-head self-attention with learned Q/K/V/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(params: &mut ParamSet, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        MultiHeadAttention {
            wq: Linear::new(params, &format!("{name}.wq"), d, d, rng),
            wk: Linear::new(params, &format!("{name}.wk"), d, d, rng),
            wv: Linear::new(params, &format!("{name}.wv"), d, d, rng),
            wo: Linear::new(params, &format!("{name}.wo"), d, d, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut GradGraph, bound: &[Value], x: Value) -> Result<Value> {
        let q = self.wq.forward(g, bound, x)?;
        let k = self.wk.forward(g, bound, x)?;
        let v = self.wv.forward(g, bound, x)?;
        let att = scaled_dot_attention(g, q, k, v, self.heads)?;
        self.wo.forward(g, bound, att.out)
    }
}

/// Pre-norm transformer block: x + MHA(LN(x)); x + MLP(LN(x)).
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNormLayer,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNormLayer,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut impl Rng,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNormLayer::new(params, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(params, &format!("{name}.attn"), d, heads, rng),
            ln2: LayerNormLayer::new(params, &format!("{name}.ln2"), d),
            fc1: Linear::new(params, &format!("{name}.fc1"), d, d * mlp_ratio, rng),
            fc2: Linear::new(params, &format!("{name}.fc2"), d * mlp_ratio, d, rng),
        }
    }

    pub fn forward(&self, g: &mut GradGraph, bound: &[Value], x: Value) -> Result<Value> {
        let h = self.ln1.forward(g, bound, x)?;
        let h = self.attn.forward(g, bound, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, bound, x)?;
        let h = self.fc1.forward(g, bound, h)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, bound, h)?;
        g.add(x, h)
    }
}
