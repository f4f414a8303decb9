//! Normalization kernels (batch, instance, layer) with f64 statistics.
//!
//! Each group is normalized to mean 0 / variance 1 with an epsilon inside the
//! square root, then scaled and shifted. The backward formulas include the
//! mean/variance dependence on the input; the fixed-stats variant (eval-mode
//! batch norm) treats the statistics as constants.

/// Per-group statistics saved during the forward pass.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
    /// Biased variance per group (what the running average tracks).
    pub var: Vec<f32>,
}

/// Groups of flat ranges sharing one mean/variance.
///
/// `ranges[g]` lists (start, len) spans of group `g`; `scale_idx[g]` is the
/// gamma/beta channel of the group. Layer norm does not fit this scheme
/// (its scale varies within a group) and has dedicated kernels below.
pub struct ChannelGroups {
    pub ranges: Vec<Vec<(usize, usize)>>,
    pub scale_idx: Vec<usize>,
}

impl ChannelGroups {
    /// Batch norm: one group per channel, spanning every sample.
    pub fn batch(n: usize, c: usize, spatial: usize) -> Self {
        let ranges = (0..c)
            .map(|ci| (0..n).map(|ni| ((ni * c + ci) * spatial, spatial)).collect())
            .collect();
        ChannelGroups { ranges, scale_idx: (0..c).collect() }
    }

    /// Instance norm: one group per (sample, channel).
    pub fn instance(n: usize, c: usize, spatial: usize) -> Self {
        let mut ranges = Vec::with_capacity(n * c);
        let mut scale_idx = Vec::with_capacity(n * c);
        for ni in 0..n {
            for ci in 0..c {
                ranges.push(vec![((ni * c + ci) * spatial, spatial)]);
                scale_idx.push(ci);
            }
        }
        ChannelGroups { ranges, scale_idx }
    }
}

pub fn grouped_norm_forward(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    groups: &ChannelGroups,
    eps: f32,
) -> (Vec<f32>, NormStats) {
    let mut out = vec![0.0f32; x.len()];
    let g_n = groups.ranges.len();
    let mut stats = NormStats {
        mean: vec![0.0; g_n],
        inv_std: vec![0.0; g_n],
        var: vec![0.0; g_n],
    };
    for (g, spans) in groups.ranges.iter().enumerate() {
        let count: usize = spans.iter().map(|&(_, l)| l).sum();
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for &(s, l) in spans {
            for &v in &x[s..s + l] {
                sum += v as f64;
                sq += (v as f64) * (v as f64);
            }
        }
        let mean = sum / count as f64;
        let var = (sq / count as f64 - mean * mean).max(0.0);
        let inv = 1.0 / (var + eps as f64).sqrt();
        stats.mean[g] = mean as f32;
        stats.inv_std[g] = inv as f32;
        stats.var[g] = var as f32;
        let (ga, be) = (gamma[groups.scale_idx[g]], beta[groups.scale_idx[g]]);
        for &(s, l) in spans {
            for i in s..s + l {
                out[i] = ga * ((x[i] - mean as f32) * inv as f32) + be;
            }
        }
    }
    (out, stats)
}

/// Backward for [`grouped_norm_forward`]. Returns (g_input, g_gamma, g_beta).
pub fn grouped_norm_backward(
    x: &[f32],
    g_out: &[f32],
    gamma: &[f32],
    groups: &ChannelGroups,
    stats: &NormStats,
    n_scales: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut g_in = vec![0.0f32; x.len()];
    let mut g_gamma = vec![0.0f32; n_scales];
    let mut g_beta = vec![0.0f32; n_scales];
    for (g, spans) in groups.ranges.iter().enumerate() {
        let count: usize = spans.iter().map(|&(_, l)| l).sum();
        let (mean, inv) = (stats.mean[g] as f64, stats.inv_std[g] as f64);
        let ga = gamma[groups.scale_idx[g]] as f64;
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for &(s, l) in spans {
            for i in s..s + l {
                let xh = (x[i] as f64 - mean) * inv;
                let go = g_out[i] as f64;
                sum_g += go;
                sum_gx += go * xh;
            }
        }
        g_gamma[groups.scale_idx[g]] += sum_gx as f32;
        g_beta[groups.scale_idx[g]] += sum_g as f32;
        let (mg, mgx) = (sum_g / count as f64, sum_gx / count as f64);
        for &(s, l) in spans {
            for i in s..s + l {
                let xh = (x[i] as f64 - mean) * inv;
                g_in[i] += (ga * inv * (g_out[i] as f64 - mg - xh * mgx)) as f32;
            }
        }
    }
    (g_in, g_gamma, g_beta)
}

/// Eval-mode batch norm with fixed running statistics.
pub fn fixed_norm_forward(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    n: usize,
    c: usize,
    spatial: usize,
    eps: f32,
) -> (Vec<f32>, Vec<f32>) {
    let inv: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let s = (ni * c + ci) * spatial;
            for i in s..s + spatial {
                out[i] = gamma[ci] * ((x[i] - mean[ci]) * inv[ci]) + beta[ci];
            }
        }
    }
    (out, inv)
}

/// Backward for fixed-stats norm: statistics are constants.
pub fn fixed_norm_backward(
    x: &[f32],
    g_out: &[f32],
    gamma: &[f32],
    mean: &[f32],
    inv: &[f32],
    n: usize,
    c: usize,
    spatial: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut g_in = vec![0.0f32; x.len()];
    let mut g_gamma = vec![0.0f32; c];
    let mut g_beta = vec![0.0f32; c];
    for ni in 0..n {
        for ci in 0..c {
            let s = (ni * c + ci) * spatial;
            let mut acc_g = 0.0f64;
            let mut acc_gx = 0.0f64;
            for i in s..s + spatial {
                g_in[i] += g_out[i] * gamma[ci] * inv[ci];
                acc_g += g_out[i] as f64;
                acc_gx += g_out[i] as f64 * ((x[i] - mean[ci]) * inv[ci]) as f64;
            }
            g_beta[ci] += acc_g as f32;
            g_gamma[ci] += acc_gx as f32;
        }
    }
    (g_in, g_gamma, g_beta)
}

/// Layer norm over the last axis of a (rows, width) tensor.
pub fn layer_norm_forward(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    rows: usize,
    width: usize,
    eps: f32,
) -> (Vec<f32>, NormStats) {
    let mut out = vec![0.0f32; x.len()];
    let mut stats =
        NormStats { mean: vec![0.0; rows], inv_std: vec![0.0; rows], var: vec![0.0; rows] };
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for &v in row {
            sum += v as f64;
            sq += (v as f64) * (v as f64);
        }
        let mean = sum / width as f64;
        let var = (sq / width as f64 - mean * mean).max(0.0);
        let inv = 1.0 / (var + eps as f64).sqrt();
        stats.mean[r] = mean as f32;
        stats.inv_std[r] = inv as f32;
        stats.var[r] = var as f32;
        for i in 0..width {
            out[r * width + i] = gamma[i] * ((row[i] - mean as f32) * inv as f32) + beta[i];
        }
    }
    (out, stats)
}

pub fn layer_norm_backward(
    x: &[f32],
    g_out: &[f32],
    gamma: &[f32],
    stats: &NormStats,
    rows: usize,
    width: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut g_in = vec![0.0f32; x.len()];
    let mut g_gamma = vec![0.0f32; width];
    let mut g_beta = vec![0.0f32; width];
    for r in 0..rows {
        let (mean, inv) = (stats.mean[r] as f64, stats.inv_std[r] as f64);
        let mut sum_h = 0.0f64;
        let mut sum_hx = 0.0f64;
        for i in 0..width {
            let idx = r * width + i;
            let xh = (x[idx] as f64 - mean) * inv;
            let h = g_out[idx] as f64 * gamma[i] as f64;
            g_gamma[i] += (g_out[idx] as f64 * xh) as f32;
            g_beta[i] += g_out[idx];
            sum_h += h;
            sum_hx += h * xh;
        }
        let (mh, mhx) = (sum_h / width as f64, sum_hx / width as f64);
        for i in 0..width {
            let idx = r * width + i;
            let xh = (x[idx] as f64 - mean) * inv;
            let h = g_out[idx] as f64 * gamma[i] as f64;
            g_in[idx] = (inv * (h - mh - xh * mhx)) as f32;
        }
    }
    (g_in, g_gamma, g_beta)
}
