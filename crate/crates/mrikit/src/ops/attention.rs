//! Scaled dot-product attention over a gradient graph.

use crate::tensor::{GradGraph, Value};
use crate::{Error, Result};

/// Output of [`scaled_dot_attention`]: the mixed values and, per head, the
/// softmax attention weights (each a (len_q, len_k) node).
pub struct AttentionOut {
    pub out: Value,
    pub weights: Vec<Value>,
}

/// softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated.
///
/// `q`, `k`, `v` are (length, width) tensors; the width must be divisible by
/// `heads`. Projections are the caller's concern (see `nn::MultiHeadAttention`).
pub fn scaled_dot_attention(
    g: &mut GradGraph,
    q: Value,
    k: Value,
    v: Value,
    heads: usize,
) -> Result<AttentionOut> {
    let (len_q, width) = g.value(q).dims2()?;
    let (len_k, width_k) = g.value(k).dims2()?;
    let (len_v, width_v) = g.value(v).dims2()?;
    if width != width_k || width != width_v {
        return Err(Error::shape("attention", format!("widths {width}/{width_k}/{width_v}")));
    }
    if len_k != len_v {
        return Err(Error::shape("attention", format!("key length {len_k} vs value length {len_v}")));
    }
    if heads == 0 || width % heads != 0 {
        return Err(Error::InvalidSpec(format!("width {width} not divisible by {heads} heads")));
    }
    let d_head = width / heads;
    let scale = 1.0 / (d_head as f32).sqrt();

    let mut mixed = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qs = g.narrow(q, 1, h * d_head, d_head)?;
        let ks = g.narrow(k, 1, h * d_head, d_head)?;
        let vs = g.narrow(v, 1, h * d_head, d_head)?;
        let kt = g.transpose2d(ks)?;
        let scores = g.matmul(qs, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores)?;
        weights.push(attn);
        mixed.push(g.matmul(attn, vs)?);
    }
    let out = if heads == 1 { mixed[0] } else { g.concat(&mixed, 1)? };
    debug_assert_eq!(g.shape(out), &[len_q, width]);
    Ok(AttentionOut { out, weights })
}
