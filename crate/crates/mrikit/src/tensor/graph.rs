//! Define-by-run reverse-mode gradient graph.
//!
//! Every builder method executes its forward kernel eagerly and records an
//! op node; the graph is rebuilt on every forward pass, so variable slice
//! counts need no padding. `backward` replays the tape in reverse insertion
//! order (which is a topological order by construction), zeroing all
//! gradients first and accumulating by summation.

use std::collections::HashMap;

use rand::Rng;

use crate::ops::conv::{self, ConvDims};
use crate::ops::matmul as mm;
use crate::ops::norm::{self, ChannelGroups, NormStats};
use crate::ops::pool;
use crate::ops::resample;
use crate::{Error, Result, Tensor};

/// Handle to a node in a [`GradGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(pub(crate) usize);

/// Gradient propagation rule for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Standard,
    /// Zero negative upstream gradients at every rectifier (ReLU and
    /// LeakyReLU) for this pass only; the graph itself is untouched.
    Guided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Max,
    Mean,
}

/// Which normalization scheme a `normalize` node applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Instance,
    Layer,
}

/// Captured activations and upstream gradients at a named layer.
#[derive(Debug, Clone)]
pub struct TapRecord {
    pub layer_name: String,
    pub activations: Tensor,
    pub upstream_grad: Tensor,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize, f32),
    Ln(usize),
    Relu(usize),
    LeakyRelu(usize, f32),
    Sigmoid(usize),
    Gelu(usize),
    Softplus(usize),
    Clamp { input: usize, lo: f32, hi: f32 },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { input: usize, rows: usize, cols: usize },
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { input: usize, axis: usize, start: usize, len: usize },
    RowBias { input: usize, bias: usize },
    ReduceRows { input: usize, kind: ReduceKind, arg: Vec<usize> },
    SumAll(usize),
    MeanAll(usize),
    SoftmaxRows(usize),
    Dropout { input: usize, mask: Vec<f32> },
    Conv2d { input: usize, weight: usize, bias: Option<usize>, dims: ConvDims },
    ConvTranspose2d { input: usize, weight: usize, bias: Option<usize>, dims: ConvDims },
    MaxPool2d { input: usize, window: usize, arg: Vec<usize> },
    AvgPool2d { input: usize, window: usize },
    GlobalAvgPool(usize),
    UpsampleBilinear { input: usize, factor: usize },
    GroupNorm { input: usize, gamma: usize, beta: usize, kind: NormKind, stats: NormStats },
    LayerNorm { input: usize, gamma: usize, beta: usize, stats: NormStats },
    FixedNorm { input: usize, gamma: usize, beta: usize, mean: Vec<f32>, inv: Vec<f32> },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    /// f64 view of scalar nodes along loss chains; keeps the
    /// finite-difference quotient above f32 rounding noise.
    shadow: Option<f64>,
}

/// The gradient tape. See the module docs.
#[derive(Default)]
pub struct GradGraph {
    nodes: Vec<Node>,
    names: HashMap<String, usize>,
}

impl GradGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bind a tensor as a leaf; gradient tracking follows `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Value {
        self.push(Op::Leaf, t.clone(), t.requires_grad)
    }

    /// Bind a tensor as an untracked constant.
    pub fn constant(&mut self, t: Tensor) -> Value {
        self.push(Op::Leaf, t, false)
    }

    pub fn scalar_const(&mut self, v: f32) -> Value {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Value) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Attach a name to a node so taps can find it later.
    pub fn set_name(&mut self, v: Value, name: &str) {
        self.names.insert(name.to_string(), v.0);
    }

    pub fn named(&self, name: &str) -> Option<Value> {
        self.names.get(name).map(|&id| Value(id))
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.names.keys().cloned().collect();
        v.sort();
        v
    }

    /// Read a named layer's activations and upstream gradient.
    ///
    /// Fails with the list of available names if the layer is unknown, and
    /// with [`Error::TapNotPopulated`] before a backward pass has run.
    pub fn tap_record(&self, name: &str) -> Result<TapRecord> {
        let id = *self.names.get(name).ok_or_else(|| Error::UnknownLayer {
            name: name.to_string(),
            available: self.names(),
        })?;
        let node = &self.nodes[id];
        let grad = node.grad.as_ref().ok_or_else(|| Error::TapNotPopulated(name.to_string()))?;
        Ok(TapRecord {
            layer_name: name.to_string(),
            activations: node.value.clone(),
            upstream_grad: Tensor::from_vec(node.value.shape(), grad.clone())
                .expect("gradient matches value shape"),
        })
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Value {
        self.nodes.push(Node { op, value, grad: None, requires_grad, shadow: None });
        Value(self.nodes.len() - 1)
    }

    /// Highest-precision available view of a scalar node.
    pub fn scalar_f64(&self, v: Value) -> f64 {
        let node = &self.nodes[v.0];
        node.shadow.unwrap_or(node.value.data()[0] as f64)
    }

    fn shadow_in(&self, id: usize) -> f64 {
        self.nodes[id].shadow.unwrap_or(self.nodes[id].value.data()[0] as f64)
    }

    fn is_scalar(&self, id: usize) -> bool {
        self.nodes[id].value.numel() == 1
    }

    fn set_shadow(&mut self, v: Value, s: f64) {
        self.nodes[v.0].shadow = Some(s);
    }

    fn req(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn data(&self, id: usize) -> &[f32] {
        self.nodes[id].value.data()
    }

    // ── elementwise ──────────────────────────────────────────────────

    fn binary_same_shape(&mut self, op: &'static str, a: Value, b: Value) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary_same_shape("add", a, b)?;
        let data = self.data(a.0).iter().zip(self.data(b.0)).map(|(x, y)| x + y).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let rq = self.req(a.0) || self.req(b.0);
        let v = self.push(Op::Add(a.0, b.0), t, rq);
        if self.is_scalar(a.0) && self.is_scalar(b.0) {
            let s = self.shadow_in(a.0) + self.shadow_in(b.0);
            self.set_shadow(v, s);
        }
        Ok(v)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary_same_shape("sub", a, b)?;
        let data = self.data(a.0).iter().zip(self.data(b.0)).map(|(x, y)| x - y).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let rq = self.req(a.0) || self.req(b.0);
        let v = self.push(Op::Sub(a.0, b.0), t, rq);
        if self.is_scalar(a.0) && self.is_scalar(b.0) {
            let s = self.shadow_in(a.0) - self.shadow_in(b.0);
            self.set_shadow(v, s);
        }
        Ok(v)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary_same_shape("mul", a, b)?;
        let data = self.data(a.0).iter().zip(self.data(b.0)).map(|(x, y)| x * y).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let rq = self.req(a.0) || self.req(b.0);
        Ok(self.push(Op::Mul(a.0, b.0), t, rq))
    }

    pub fn scale(&mut self, a: Value, c: f32) -> Value {
        let t = Tensor::from_vec(
            self.shape(a),
            self.data(a.0).iter().map(|x| x * c).collect(),
        )
        .expect("same shape");
        let rq = self.req(a.0);
        let v = self.push(Op::Scale(a.0, c), t, rq);
        if self.is_scalar(a.0) {
            let s = self.shadow_in(a.0) * c as f64;
            self.set_shadow(v, s);
        }
        v
    }

    pub fn add_scalar(&mut self, a: Value, c: f32) -> Value {
        let t = Tensor::from_vec(
            self.shape(a),
            self.data(a.0).iter().map(|x| x + c).collect(),
        )
        .expect("same shape");
        let rq = self.req(a.0);
        let v = self.push(Op::AddScalar(a.0, c), t, rq);
        if self.is_scalar(a.0) {
            let s = self.shadow_in(a.0) + c as f64;
            self.set_shadow(v, s);
        }
        v
    }

    fn unary(&mut self, a: Value, op: Op, f: impl Fn(f32) -> f32) -> Value {
        let t = Tensor::from_vec(
            self.shape(a),
            self.data(a.0).iter().map(|&x| f(x)).collect(),
        )
        .expect("same shape");
        let rq = self.req(a.0);
        let shadow = self.is_scalar(a.0).then(|| {
            let x = self.shadow_in(a.0);
            match &op {
                Op::Ln(_) => Some(x.ln()),
                Op::Sigmoid(_) => Some(1.0 / (1.0 + (-x).exp())),
                Op::Softplus(_) => Some(x.max(0.0) + (-x.abs()).exp().ln_1p()),
                Op::Clamp { lo, hi, .. } => Some(x.clamp(*lo as f64, *hi as f64)),
                _ => None,
            }
        }).flatten();
        let v = self.push(op, t, rq);
        if let Some(s) = shadow {
            self.set_shadow(v, s);
        }
        v
    }

    pub fn ln(&mut self, a: Value) -> Value {
        self.unary(a, Op::Ln(a.0), f32::ln)
    }

    pub fn relu(&mut self, a: Value) -> Value {
        self.unary(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Value, slope: f32) -> Value {
        self.unary(a, Op::LeakyRelu(a.0, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        self.unary(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn gelu(&mut self, a: Value) -> Value {
        self.unary(a, Op::Gelu(a.0), gelu)
    }

    pub fn softplus(&mut self, a: Value) -> Value {
        self.unary(a, Op::Softplus(a.0), |x| x.max(0.0) + (-x.abs()).exp().ln_1p())
    }

    pub fn clamp(&mut self, a: Value, lo: f32, hi: f32) -> Value {
        self.unary(a, Op::Clamp { input: a.0, lo, hi }, |x| x.clamp(lo, hi))
    }

    // ── linear algebra and shape ─────────────────────────────────────

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner {} vs {}", k, k2)));
        }
        let out = mm::matmul(self.data(a.0), self.data(b.0), m, k, n);
        let t = Tensor::from_vec(&[m, n], out)?;
        let rq = self.req(a.0) || self.req(b.0);
        let shadow = (m == 1 && n == 1).then(|| {
            self.data(a.0)
                .iter()
                .zip(self.data(b.0))
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum::<f64>()
        });
        let v = self.push(Op::MatMul { a: a.0, b: b.0, m, k, n }, t, rq);
        if let Some(s) = shadow {
            self.set_shadow(v, s);
        }
        Ok(v)
    }

    pub fn transpose2d(&mut self, a: Value) -> Result<Value> {
        let (r, c) = self.value(a).dims2()?;
        let t = Tensor::from_vec(&[c, r], mm::transpose(self.data(a.0), r, c))?;
        let rq = self.req(a.0);
        Ok(self.push(Op::Transpose { input: a.0, rows: r, cols: c }, t, rq))
    }

    pub fn reshape(&mut self, a: Value, shape: &[usize]) -> Result<Value> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(a), shape),
            ));
        }
        let t = Tensor::from_vec(shape, self.data(a.0).to_vec())?;
        let rq = self.req(a.0);
        let shadow = self.nodes[a.0].shadow;
        let v = self.push(Op::Reshape(a.0), t, rq);
        self.nodes[v.0].shadow = shadow;
        Ok(v)
    }

    pub fn concat(&mut self, parts: &[Value], axis: usize) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no parts".to_string()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {} of {:?}", axis, first)));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &e)| i != axis && e != first[i])
            {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", s, first)));
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0f32; outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let pa = self.shape(p)[axis];
            let src = self.data(p.0);
            for o in 0..outer {
                let d = (o * axis_total + offset) * inner;
                let s = o * pa * inner;
                data[d..d + pa * inner].copy_from_slice(&src[s..s + pa * inner]);
            }
            offset += pa;
        }
        let rq = parts.iter().any(|&p| self.req(p.0));
        let t = Tensor::from_vec(&shape, data)?;
        Ok(self.push(Op::Concat { parts: parts.iter().map(|p| p.0).collect(), axis }, t, rq))
    }

    pub fn narrow(&mut self, a: Value, axis: usize, start: usize, len: usize) -> Result<Value> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("axis {} [{}, {}) of {:?}", axis, start, start + len, shape),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let src = self.data(a.0);
        let mut data = vec![0.0f32; outer * len * inner];
        for o in 0..outer {
            let s = (o * shape[axis] + start) * inner;
            let d = o * len * inner;
            data[d..d + len * inner].copy_from_slice(&src[s..s + len * inner]);
        }
        let rq = self.req(a.0);
        let t = Tensor::from_vec(&out_shape, data)?;
        Ok(self.push(Op::Narrow { input: a.0, axis, start, len }, t, rq))
    }

    /// (m, n) + bias (n,) broadcast over rows.
    pub fn row_bias(&mut self, a: Value, bias: Value) -> Result<Value> {
        let (m, n) = self.value(a).dims2()?;
        if self.shape(bias) != [n] {
            return Err(Error::shape(
                "row_bias",
                format!("bias {:?} for width {}", self.shape(bias), n),
            ));
        }
        let b = self.data(bias.0).to_vec();
        let mut data = self.data(a.0).to_vec();
        for r in 0..m {
            for c in 0..n {
                data[r * n + c] += b[c];
            }
        }
        let rq = self.req(a.0) || self.req(bias.0);
        let t = Tensor::from_vec(&[m, n], data)?;
        let shadow = (m == 1 && n == 1)
            .then(|| self.shadow_in(a.0) + self.data(bias.0)[0] as f64);
        let v = self.push(Op::RowBias { input: a.0, bias: bias.0 }, t, rq);
        if let Some(s) = shadow {
            self.set_shadow(v, s);
        }
        Ok(v)
    }

    /// Reduce a (rows, cols) tensor over its rows to (cols,).
    pub fn reduce_rows(&mut self, a: Value, kind: ReduceKind) -> Result<Value> {
        let (r, c) = self.value(a).dims2()?;
        let src = self.data(a.0);
        let mut out = vec![0.0f32; c];
        let mut arg = vec![0usize; if kind == ReduceKind::Max { c } else { 0 }];
        match kind {
            ReduceKind::Max => {
                for col in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    for row in 0..r {
                        let v = src[row * c + col];
                        if v > best {
                            best = v;
                            arg[col] = row;
                        }
                    }
                    out[col] = best;
                }
            }
            ReduceKind::Mean => {
                for col in 0..c {
                    let mut acc = 0.0f64;
                    for row in 0..r {
                        acc += src[row * c + col] as f64;
                    }
                    out[col] = (acc / r as f64) as f32;
                }
            }
        }
        let rq = self.req(a.0);
        let t = Tensor::from_vec(&[c], out)?;
        Ok(self.push(Op::ReduceRows { input: a.0, kind, arg }, t, rq))
    }

    pub fn sum_all(&mut self, a: Value) -> Value {
        let s: f64 = self.data(a.0).iter().map(|&v| v as f64).sum();
        let rq = self.req(a.0);
        let v = self.push(Op::SumAll(a.0), Tensor::scalar(s as f32), rq);
        self.set_shadow(v, s);
        v
    }

    pub fn mean_all(&mut self, a: Value) -> Value {
        let n = self.value(a).numel();
        let s: f64 = self.data(a.0).iter().map(|&v| v as f64).sum();
        let rq = self.req(a.0);
        let v = self.push(Op::MeanAll(a.0), Tensor::scalar((s / n as f64) as f32), rq);
        self.set_shadow(v, s / n as f64);
        v
    }

    /// Row-wise softmax of a (rows, cols) tensor.
    pub fn softmax_rows(&mut self, a: Value) -> Result<Value> {
        let (r, c) = self.value(a).dims2()?;
        let src = self.data(a.0);
        let mut out = vec![0.0f32; r * c];
        for row in 0..r {
            let rowv = &src[row * c..(row + 1) * c];
            let m = rowv.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0.0f64;
            for (i, &v) in rowv.iter().enumerate() {
                let e = ((v - m) as f64).exp();
                out[row * c + i] = e as f32;
                denom += e;
            }
            for i in 0..c {
                out[row * c + i] = (out[row * c + i] as f64 / denom) as f32;
            }
        }
        let rq = self.req(a.0);
        let t = Tensor::from_vec(&[r, c], out)?;
        Ok(self.push(Op::SoftmaxRows(a.0), t, rq))
    }

    /// Inverted-scaling dropout; training-time only. `rate = 0` is a no-op.
    pub fn dropout(&mut self, a: Value, rate: f32, rng: &mut impl Rng) -> Result<Value> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {}", rate)));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f32> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.data(a.0).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let rq = self.req(a.0);
        Ok(self.push(Op::Dropout { input: a.0, mask }, t, rq))
    }

    // ── spatial ops ──────────────────────────────────────────────────

    /// x (n, c_in, h, w) * weight (c_out, c_in, kh, kw) [+ bias (c_out,)].
    pub fn conv2d(
        &mut self,
        x: Value,
        weight: Value,
        bias: Option<Value>,
        stride: usize,
        pad: usize,
    ) -> Result<Value> {
        let (n, ci, h, w) = self.value(x).dims4()?;
        let (co, ci_w, kh, kw) = self.value(weight).dims4()?;
        if ci != ci_w {
            return Err(Error::shape("conv2d", format!("input channels {} vs weight {}", ci, ci_w)));
        }
        if stride < 1 || kh < 1 || kw < 1 {
            return Err(Error::InvalidArgument("conv2d kernel and stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} exceeds padded input {}x{}", kh, kw, h + 2 * pad, w + 2 * pad),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [co] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {} channels", self.shape(b), co)));
            }
        }
        let dims = ConvDims { n, c_in: ci, h, w, c_out: co, kh, kw, stride, pad };
        let (oh, ow) = dims.conv_out_hw();
        let out = conv::conv2d_forward(
            self.data(x.0),
            self.data(weight.0),
            bias.map(|b| self.data(b.0)),
            &dims,
        );
        let rq = self.req(x.0) || self.req(weight.0) || bias.is_some_and(|b| self.req(b.0));
        let t = Tensor::from_vec(&[n, co, oh, ow], out)?;
        Ok(self.push(Op::Conv2d { input: x.0, weight: weight.0, bias: bias.map(|b| b.0), dims }, t, rq))
    }

    /// x (n, c_in, h, w) * weight (c_in, c_out, kh, kw) [+ bias (c_out,)].
    pub fn conv_transpose2d(
        &mut self,
        x: Value,
        weight: Value,
        bias: Option<Value>,
        stride: usize,
        pad: usize,
    ) -> Result<Value> {
        let (n, ci, h, w) = self.value(x).dims4()?;
        let (ci_w, co, kh, kw) = self.value(weight).dims4()?;
        if ci != ci_w {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input channels {} vs weight {}", ci, ci_w),
            ));
        }
        if stride < 1 || kh < 1 || kw < 1 {
            return Err(Error::InvalidArgument("conv_transpose2d kernel and stride must be >= 1".into()));
        }
        if let Some(b) = bias {
            if self.shape(b) != [co] {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("bias {:?} for {} channels", self.shape(b), co),
                ));
            }
        }
        let dims = ConvDims { n, c_in: ci, h, w, c_out: co, kh, kw, stride, pad };
        let (oh, ow) = dims.tconv_out_hw();
        if (h - 1) * stride + kh < 2 * pad || (w - 1) * stride + kw < 2 * pad {
            return Err(Error::shape("conv_transpose2d", "padding exceeds output".to_string()));
        }
        let out = conv::conv_transpose2d_forward(
            self.data(x.0),
            self.data(weight.0),
            bias.map(|b| self.data(b.0)),
            &dims,
        );
        let rq = self.req(x.0) || self.req(weight.0) || bias.is_some_and(|b| self.req(b.0));
        let t = Tensor::from_vec(&[n, co, oh, ow], out)?;
        Ok(self.push(
            Op::ConvTranspose2d { input: x.0, weight: weight.0, bias: bias.map(|b| b.0), dims },
            t,
            rq,
        ))
    }

    pub fn max_pool2d(&mut self, x: Value, window: usize) -> Result<Value> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if window < 1 || window > h || window > w {
            return Err(Error::InvalidArgument(format!(
                "pool window {} on {}x{} input",
                window, h, w
            )));
        }
        let (out, arg) = pool::max_pool_forward(self.data(x.0), n, c, h, w, window);
        let (oh, ow) = (pool::pooled_extent(h, window), pool::pooled_extent(w, window));
        let rq = self.req(x.0);
        let t = Tensor::from_vec(&[n, c, oh, ow], out)?;
        Ok(self.push(Op::MaxPool2d { input: x.0, window, arg }, t, rq))
    }

    pub fn avg_pool2d(&mut self, x: Value, window: usize) -> Result<Value> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if window < 1 || window > h || window > w {
            return Err(Error::InvalidArgument(format!(
                "pool window {} on {}x{} input",
                window, h, w
            )));
        }
        let out = pool::avg_pool_forward(self.data(x.0), n, c, h, w, window);
        let (oh, ow) = (pool::pooled_extent(h, window), pool::pooled_extent(w, window));
        let rq = self.req(x.0);
        let t = Tensor::from_vec(&[n, c, oh, ow], out)?;
        Ok(self.push(Op::AvgPool2d { input: x.0, window }, t, rq))
    }

    /// (n, c, h, w) -> (n, c)
    pub fn global_avg_pool(&mut self, x: Value) -> Result<Value> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let out = pool::global_avg_pool_forward(self.data(x.0), n, c, h * w);
        let rq = self.req(x.0);
        let t = Tensor::from_vec(&[n, c], out)?;
        Ok(self.push(Op::GlobalAvgPool(x.0), t, rq))
    }

    pub fn upsample_bilinear(&mut self, x: Value, factor: usize) -> Result<Value> {
        if factor < 1 {
            return Err(Error::InvalidArgument(format!("upsample factor {}", factor)));
        }
        if factor == 1 {
            return Ok(x);
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        let out = resample::upsample_bilinear_forward(self.data(x.0), n, c, h, w, factor);
        let rq = self.req(x.0);
        let t = Tensor::from_vec(&[n, c, h * factor, w * factor], out)?;
        Ok(self.push(Op::UpsampleBilinear { input: x.0, factor }, t, rq))
    }

    // ── normalization ────────────────────────────────────────────────

    fn check_norm_params(&self, op: &'static str, c: usize, gamma: Value, beta: Value) -> Result<()> {
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                op,
                format!("scale/shift {:?}/{:?} for width {}", self.shape(gamma), self.shape(beta), c),
            ));
        }
        Ok(())
    }

    /// Batch norm over (n, c, h, w) with batch statistics; returns the node
    /// and the per-channel (mean, var) so callers can update running stats.
    pub fn batch_norm_train(
        &mut self,
        x: Value,
        gamma: Value,
        beta: Value,
        eps: f32,
    ) -> Result<(Value, Vec<f32>, Vec<f32>)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        self.check_norm_params("batch_norm", c, gamma, beta)?;
        let groups = ChannelGroups::batch(n, c, h * w);
        let (out, stats) =
            norm::grouped_norm_forward(self.data(x.0), self.data(gamma.0), self.data(beta.0), &groups, eps);
        let (mean, var) = (stats.mean.clone(), stats.var.clone());
        let rq = self.req(x.0) || self.req(gamma.0) || self.req(beta.0);
        let t = Tensor::from_vec(&[n, c, h, w], out)?;
        let v = self.push(
            Op::GroupNorm { input: x.0, gamma: gamma.0, beta: beta.0, kind: NormKind::Batch, stats },
            t,
            rq,
        );
        Ok((v, mean, var))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Value,
        gamma: Value,
        beta: Value,
        mean: &[f32],
        var: &[f32],
        eps: f32,
    ) -> Result<Value> {
        let (n, c, h, w) = self.value(x).dims4()?;
        self.check_norm_params("batch_norm", c, gamma, beta)?;
        let (out, inv) = norm::fixed_norm_forward(
            self.data(x.0),
            self.data(gamma.0),
            self.data(beta.0),
            mean,
            var,
            n,
            c,
            h * w,
            eps,
        );
        let rq = self.req(x.0) || self.req(gamma.0) || self.req(beta.0);
        let t = Tensor::from_vec(&[n, c, h, w], out)?;
        Ok(self.push(
            Op::FixedNorm { input: x.0, gamma: gamma.0, beta: beta.0, mean: mean.to_vec(), inv },
            t,
            rq,
        ))
    }

    /// Instance norm over (n, c, h, w): each (sample, channel) plane.
    pub fn instance_norm(&mut self, x: Value, gamma: Value, beta: Value, eps: f32) -> Result<Value> {
        let (n, c, h, w) = self.value(x).dims4()?;
        self.check_norm_params("instance_norm", c, gamma, beta)?;
        let groups = ChannelGroups::instance(n, c, h * w);
        let (out, stats) =
            norm::grouped_norm_forward(self.data(x.0), self.data(gamma.0), self.data(beta.0), &groups, eps);
        let rq = self.req(x.0) || self.req(gamma.0) || self.req(beta.0);
        let t = Tensor::from_vec(&[n, c, h, w], out)?;
        Ok(self.push(
            Op::GroupNorm { input: x.0, gamma: gamma.0, beta: beta.0, kind: NormKind::Instance, stats },
            t,
            rq,
        ))
    }

    /// Layer norm over the last axis of a (rows, width) tensor.
    pub fn layer_norm(&mut self, x: Value, gamma: Value, beta: Value, eps: f32) -> Result<Value> {
        let (r, c) = self.value(x).dims2()?;
        self.check_norm_params("layer_norm", c, gamma, beta)?;
        let (out, stats) =
            norm::layer_norm_forward(self.data(x.0), self.data(gamma.0), self.data(beta.0), r, c, eps);
        let rq = self.req(x.0) || self.req(gamma.0) || self.req(beta.0);
        let t = Tensor::from_vec(&[r, c], out)?;
        Ok(self.push(Op::LayerNorm { input: x.0, gamma: gamma.0, beta: beta.0, stats }, t, rq))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Standard reverse pass from a scalar loss.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        self.backward_mode(loss, GradMode::Standard)
    }

    /// Reverse pass with an explicit gradient rule.
    pub fn backward_mode(&mut self, loss: Value, mode: GradMode) -> Result<()> {
        let lid = loss.0;
        if self.nodes[lid].value.numel() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[lid].value.shape().to_vec()));
        }
        if !self.nodes[lid].requires_grad {
            return Err(Error::DetachedGraph);
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[lid].grad = Some(vec![1.0]);
        for id in (0..=lid).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[id].grad.take() else { continue };
            let contribs = self.input_grads(id, &g, mode);
            self.nodes[id].grad = Some(g);
            for (iid, gv) in contribs {
                debug_assert_eq!(gv.len(), self.nodes[iid].value.numel());
                match &mut self.nodes[iid].grad {
                    Some(buf) => {
                        for (b, v) in buf.iter_mut().zip(&gv) {
                            *b += v;
                        }
                    }
                    None => self.nodes[iid].grad = Some(gv),
                }
            }
        }
        Ok(())
    }

    /// Per-op chain rule: gradient contributions to each input that tracks
    /// gradients.
    fn input_grads(&self, id: usize, g: &[f32], mode: GradMode) -> Vec<(usize, Vec<f32>)> {
        let mut out: Vec<(usize, Vec<f32>)> = Vec::new();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.req(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.req(*b) {
                    out.push((*b, g.iter().map(|v| -v).collect()));
                }
            }
            Op::Mul(a, b) => {
                if self.req(*a) {
                    out.push((*a, g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect()));
                }
                if self.req(*b) {
                    out.push((*b, g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect()));
                }
            }
            Op::Scale(a, c) => {
                if self.req(*a) {
                    out.push((*a, g.iter().map(|v| v * c).collect()));
                }
            }
            Op::AddScalar(a, _) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
            }
            Op::Ln(a) => {
                if self.req(*a) {
                    out.push((*a, g.iter().zip(self.data(*a)).map(|(g, x)| g / x).collect()));
                }
            }
            Op::Relu(a) => {
                if self.req(*a) {
                    let gv = self
                        .data(*a)
                        .iter()
                        .zip(g)
                        .map(|(&x, &g)| {
                            let g = if mode == GradMode::Guided { g.max(0.0) } else { g };
                            if x > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    out.push((*a, gv));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.req(*a) {
                    let s = *slope;
                    let gv = self
                        .data(*a)
                        .iter()
                        .zip(g)
                        .map(|(&x, &g)| {
                            let g = if mode == GradMode::Guided { g.max(0.0) } else { g };
                            if x > 0.0 {
                                g
                            } else {
                                s * g
                            }
                        })
                        .collect();
                    out.push((*a, gv));
                }
            }
            Op::Sigmoid(a) => {
                if self.req(*a) {
                    let y = self.data(id);
                    out.push((*a, g.iter().zip(y).map(|(g, &y)| g * y * (1.0 - y)).collect()));
                }
            }
            Op::Gelu(a) => {
                if self.req(*a) {
                    out.push((*a, g.iter().zip(self.data(*a)).map(|(g, &x)| g * gelu_deriv(x)).collect()));
                }
            }
            Op::Softplus(a) => {
                if self.req(*a) {
                    out.push((*a, g.iter().zip(self.data(*a)).map(|(g, &x)| g * sigmoid(x)).collect()));
                }
            }
            Op::Clamp { input, lo, hi } => {
                if self.req(*input) {
                    let gv = self
                        .data(*input)
                        .iter()
                        .zip(g)
                        .map(|(&x, &g)| if x > *lo && x < *hi { g } else { 0.0 })
                        .collect();
                    out.push((*input, gv));
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                if self.req(*a) {
                    out.push((*a, mm::matmul_grad_a(g, self.data(*b), *m, *k, *n)));
                }
                if self.req(*b) {
                    out.push((*b, mm::matmul_grad_b(self.data(*a), g, *m, *k, *n)));
                }
            }
            Op::Transpose { input, rows, cols } => {
                if self.req(*input) {
                    out.push((*input, mm::transpose(g, *cols, *rows)));
                }
            }
            Op::Reshape(a) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
            }
            Op::Concat { parts, axis } => {
                let shape = self.nodes[id].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let pa = self.nodes[p].value.shape()[*axis];
                    if self.req(p) {
                        let mut gv = vec![0.0f32; outer * pa * inner];
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            let d = o * pa * inner;
                            gv[d..d + pa * inner].copy_from_slice(&g[s..s + pa * inner]);
                        }
                        out.push((p, gv));
                    }
                    offset += pa;
                }
            }
            Op::Narrow { input, axis, start, len } => {
                if self.req(*input) {
                    let shape = self.nodes[*input].value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let mut gv = vec![0.0f32; self.nodes[*input].value.numel()];
                    for o in 0..outer {
                        let d = (o * shape[*axis] + start) * inner;
                        let s = o * len * inner;
                        gv[d..d + len * inner].copy_from_slice(&g[s..s + len * inner]);
                    }
                    out.push((*input, gv));
                }
            }
            Op::RowBias { input, bias } => {
                let (m, n) = self.nodes[*input].value.dims2().expect("checked at build");
                if self.req(*input) {
                    out.push((*input, g.to_vec()));
                }
                if self.req(*bias) {
                    let mut gb = vec![0.0f32; n];
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += g[r * n + c];
                        }
                    }
                    out.push((*bias, gb));
                }
            }
            Op::ReduceRows { input, kind, arg } => {
                if self.req(*input) {
                    let (r, c) = self.nodes[*input].value.dims2().expect("checked at build");
                    let mut gv = vec![0.0f32; r * c];
                    match kind {
                        ReduceKind::Max => {
                            for col in 0..c {
                                gv[arg[col] * c + col] = g[col];
                            }
                        }
                        ReduceKind::Mean => {
                            for col in 0..c {
                                let share = g[col] / r as f32;
                                for row in 0..r {
                                    gv[row * c + col] = share;
                                }
                            }
                        }
                    }
                    out.push((*input, gv));
                }
            }
            Op::SumAll(a) => {
                if self.req(*a) {
                    out.push((*a, vec![g[0]; self.nodes[*a].value.numel()]));
                }
            }
            Op::MeanAll(a) => {
                if self.req(*a) {
                    let n = self.nodes[*a].value.numel();
                    out.push((*a, vec![g[0] / n as f32; n]));
                }
            }
            Op::SoftmaxRows(a) => {
                if self.req(*a) {
                    let (r, c) = self.nodes[id].value.dims2().expect("checked at build");
                    let y = self.data(id);
                    let mut gv = vec![0.0f32; r * c];
                    for row in 0..r {
                        let mut dot = 0.0f64;
                        for i in 0..c {
                            dot += (g[row * c + i] * y[row * c + i]) as f64;
                        }
                        for i in 0..c {
                            gv[row * c + i] = y[row * c + i] * (g[row * c + i] - dot as f32);
                        }
                    }
                    out.push((*a, gv));
                }
            }
            Op::Dropout { input, mask } => {
                if self.req(*input) {
                    out.push((*input, g.iter().zip(mask).map(|(g, m)| g * m).collect()));
                }
            }
            Op::Conv2d { input, weight, bias, dims } => {
                if self.req(*input) {
                    out.push((*input, conv::conv2d_input_grad(g, self.data(*weight), dims)));
                }
                if self.req(*weight) {
                    out.push((*weight, conv::conv2d_weight_grad(self.data(*input), g, dims)));
                }
                if let Some(b) = bias {
                    if self.req(*b) {
                        let (oh, ow) = dims.conv_out_hw();
                        out.push((*b, conv::conv2d_bias_grad(g, dims.c_out, oh * ow, dims.n)));
                    }
                }
            }
            Op::ConvTranspose2d { input, weight, bias, dims } => {
                if self.req(*input) {
                    out.push((*input, conv::conv_transpose2d_input_grad(g, self.data(*weight), dims)));
                }
                if self.req(*weight) {
                    out.push((*weight, conv::conv_transpose2d_weight_grad(self.data(*input), g, dims)));
                }
                if let Some(b) = bias {
                    if self.req(*b) {
                        let (oh, ow) = dims.tconv_out_hw();
                        out.push((*b, conv::conv_transpose2d_bias_grad(g, dims.c_out, oh * ow, dims.n)));
                    }
                }
            }
            Op::MaxPool2d { input, window, arg } => {
                if self.req(*input) {
                    let (n, c, h, w) = self.nodes[*input].value.dims4().expect("checked at build");
                    out.push((*input, pool::max_pool_backward(g, arg, n, c, h, w, *window)));
                }
            }
            Op::AvgPool2d { input, window } => {
                if self.req(*input) {
                    let (n, c, h, w) = self.nodes[*input].value.dims4().expect("checked at build");
                    out.push((*input, pool::avg_pool_backward(g, n, c, h, w, *window)));
                }
            }
            Op::GlobalAvgPool(a) => {
                if self.req(*a) {
                    let (n, c, h, w) = self.nodes[*a].value.dims4().expect("checked at build");
                    out.push((*a, pool::global_avg_pool_backward(g, n, c, h * w)));
                }
            }
            Op::UpsampleBilinear { input, factor } => {
                if self.req(*input) {
                    let (n, c, h, w) = self.nodes[*input].value.dims4().expect("checked at build");
                    out.push((*input, resample::upsample_bilinear_backward(g, n, c, h, w, *factor)));
                }
            }
            Op::GroupNorm { input, gamma, beta, kind, stats } => {
                let (n, c, h, w) = self.nodes[*input].value.dims4().expect("checked at build");
                let groups = match kind {
                    NormKind::Batch => ChannelGroups::batch(n, c, h * w),
                    NormKind::Instance => ChannelGroups::instance(n, c, h * w),
                    NormKind::Layer => unreachable!("layer norm has its own op"),
                };
                let (gi, gg, gb) = norm::grouped_norm_backward(
                    self.data(*input),
                    g,
                    self.data(*gamma),
                    &groups,
                    stats,
                    c,
                );
                if self.req(*input) {
                    out.push((*input, gi));
                }
                if self.req(*gamma) {
                    out.push((*gamma, gg));
                }
                if self.req(*beta) {
                    out.push((*beta, gb));
                }
            }
            Op::LayerNorm { input, gamma, beta, stats } => {
                let (r, c) = self.nodes[*input].value.dims2().expect("checked at build");
                let (gi, gg, gb) =
                    norm::layer_norm_backward(self.data(*input), g, self.data(*gamma), stats, r, c);
                if self.req(*input) {
                    out.push((*input, gi));
                }
                if self.req(*gamma) {
                    out.push((*gamma, gg));
                }
                if self.req(*beta) {
                    out.push((*beta, gb));
                }
            }
            Op::FixedNorm { input, gamma, beta, mean, inv } => {
                let (n, c, h, w) = self.nodes[*input].value.dims4().expect("checked at build");
                let (gi, gg, gb) = norm::fixed_norm_backward(
                    self.data(*input),
                    g,
                    self.data(*gamma),
                    mean,
                    inv,
                    n,
                    c,
                    h * w,
                );
                if self.req(*input) {
                    out.push((*input, gi));
                }
                if self.req(*gamma) {
                    out.push((*gamma, gg));
                }
                if self.req(*beta) {
                    out.push((*beta, gb));
                }
            }
        }
        out
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_deriv(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
