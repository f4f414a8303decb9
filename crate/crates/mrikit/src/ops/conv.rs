//! Direct 2-d convolution and transposed convolution kernels.
//!
//! Layouts are row-major NCHW; conv weights are (c_out, c_in, kh, kw) and
//! transposed-conv weights are (c_in, c_out, kh, kw), so a single weight
//! tensor makes `conv_transpose2d` the exact adjoint of `conv2d` with the
//! same stride and padding.
//!
//! The stride-1 inner loops are written as contiguous-row AXPY/dot updates;
//! parallel splits are over disjoint output regions only, so results do not
//! depend on the thread count.

use crate::par;

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    /// Output extents of the forward convolution.
    pub fn conv_out_hw(&self) -> (usize, usize) {
        let oh = (self.h + 2 * self.pad - self.kh) / self.stride + 1;
        let ow = (self.w + 2 * self.pad - self.kw) / self.stride + 1;
        (oh, ow)
    }

    /// Output extents of the transposed convolution.
    pub fn tconv_out_hw(&self) -> (usize, usize) {
        let oh = (self.h - 1) * self.stride + self.kh - 2 * self.pad;
        let ow = (self.w - 1) * self.stride + self.kw - 2 * self.pad;
        (oh, ow)
    }
}

/// Copy (c, h, w) planes of one sample into a zero-padded buffer.
fn pad_plane(src: &[f32], c: usize, h: usize, w: usize, pad: usize, dst: &mut [f32]) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    debug_assert_eq!(dst.len(), c * ph * pw);
    for ci in 0..c {
        for y in 0..h {
            let s = ci * h * w + y * w;
            let d = ci * ph * pw + (y + pad) * pw + pad;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
}

/// Forward convolution: x (n, c_in, h, w) * w (c_out, c_in, kh, kw) -> (n, c_out, oh, ow).
pub fn conv2d_forward(x: &[f32], weight: &[f32], bias: Option<&[f32]>, d: &ConvDims) -> Vec<f32> {
    let (oh, ow) = d.conv_out_hw();
    let (ph, pw) = (d.h + 2 * d.pad, d.w + 2 * d.pad);
    let plane = ph * pw;

    let mut padded = vec![0.0f32; d.n * d.c_in * plane];
    for n in 0..d.n {
        pad_plane(
            &x[n * d.c_in * d.h * d.w..(n + 1) * d.c_in * d.h * d.w],
            d.c_in,
            d.h,
            d.w,
            d.pad,
            &mut padded[n * d.c_in * plane..(n + 1) * d.c_in * plane],
        );
    }

    let mut out = vec![0.0f32; d.n * d.c_out * oh * ow];
    let dd = *d;
    par::for_each_chunk(&mut out, oh * ow, move |idx, chunk| {
        let (n, co) = (idx / dd.c_out, idx % dd.c_out);
        let xp = &padded[n * dd.c_in * plane..(n + 1) * dd.c_in * plane];
        if let Some(b) = bias {
            chunk.fill(b[co]);
        }
        for ci in 0..dd.c_in {
            let xc = &xp[ci * plane..(ci + 1) * plane];
            for ky in 0..dd.kh {
                for kx in 0..dd.kw {
                    let wv = weight[((co * dd.c_in + ci) * dd.kh + ky) * dd.kw + kx];
                    if dd.stride == 1 {
                        for oy in 0..oh {
                            let row = &xc[(oy + ky) * pw + kx..(oy + ky) * pw + kx + ow];
                            let orow = &mut chunk[oy * ow..(oy + 1) * ow];
                            for (o, &v) in orow.iter_mut().zip(row) {
                                *o += wv * v;
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            let base = (oy * dd.stride + ky) * pw + kx;
                            let orow = &mut chunk[oy * ow..(oy + 1) * ow];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += wv * xc[base + ox * dd.stride];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_input_grad(g_out: &[f32], weight: &[f32], d: &ConvDims) -> Vec<f32> {
    let (oh, ow) = d.conv_out_hw();
    let (ph, pw) = (d.h + 2 * d.pad, d.w + 2 * d.pad);
    let plane = ph * pw;

    let mut g_pad = vec![0.0f32; d.n * d.c_in * plane];
    let dd = *d;
    par::for_each_chunk(&mut g_pad, d.c_in * plane, move |n, gp| {
        for co in 0..dd.c_out {
            let go = &g_out[(n * dd.c_out + co) * oh * ow..(n * dd.c_out + co + 1) * oh * ow];
            for ci in 0..dd.c_in {
                let gc = &mut gp[ci * plane..(ci + 1) * plane];
                for ky in 0..dd.kh {
                    for kx in 0..dd.kw {
                        let wv = weight[((co * dd.c_in + ci) * dd.kh + ky) * dd.kw + kx];
                        if dd.stride == 1 {
                            for oy in 0..oh {
                                let grow = &go[oy * ow..(oy + 1) * ow];
                                let base = (oy + ky) * pw + kx;
                                let drow = &mut gc[base..base + ow];
                                for (o, &g) in drow.iter_mut().zip(grow) {
                                    *o += wv * g;
                                }
                            }
                        } else {
                            for oy in 0..oh {
                                let base = (oy * dd.stride + ky) * pw + kx;
                                for ox in 0..ow {
                                    gc[base + ox * dd.stride] += wv * go[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    // crop padding
    let mut g_in = vec![0.0f32; d.n * d.c_in * d.h * d.w];
    for n in 0..d.n {
        for ci in 0..d.c_in {
            for y in 0..d.h {
                let s = (n * d.c_in + ci) * plane + (y + d.pad) * pw + d.pad;
                let t = (n * d.c_in + ci) * d.h * d.w + y * d.w;
                g_in[t..t + d.w].copy_from_slice(&g_pad[s..s + d.w]);
            }
        }
    }
    g_in
}

/// Gradient w.r.t. the convolution weights.
pub fn conv2d_weight_grad(x: &[f32], g_out: &[f32], d: &ConvDims) -> Vec<f32> {
    let (oh, ow) = d.conv_out_hw();
    let (ph, pw) = (d.h + 2 * d.pad, d.w + 2 * d.pad);
    let plane = ph * pw;

    let mut padded = vec![0.0f32; d.n * d.c_in * plane];
    for n in 0..d.n {
        pad_plane(
            &x[n * d.c_in * d.h * d.w..(n + 1) * d.c_in * d.h * d.w],
            d.c_in,
            d.h,
            d.w,
            d.pad,
            &mut padded[n * d.c_in * plane..(n + 1) * d.c_in * plane],
        );
    }

    let mut g_w = vec![0.0f32; d.c_out * d.c_in * d.kh * d.kw];
    let dd = *d;
    par::for_each_chunk(&mut g_w, d.c_in * d.kh * d.kw, move |co, gw| {
        for n in 0..dd.n {
            let go = &g_out[(n * dd.c_out + co) * oh * ow..(n * dd.c_out + co + 1) * oh * ow];
            for ci in 0..dd.c_in {
                let xc = &padded[(n * dd.c_in + ci) * plane..(n * dd.c_in + ci + 1) * plane];
                for ky in 0..dd.kh {
                    for kx in 0..dd.kw {
                        let mut acc = 0.0f32;
                        if dd.stride == 1 {
                            for oy in 0..oh {
                                let grow = &go[oy * ow..(oy + 1) * ow];
                                let xrow = &xc[(oy + ky) * pw + kx..(oy + ky) * pw + kx + ow];
                                for (&g, &v) in grow.iter().zip(xrow) {
                                    acc += g * v;
                                }
                            }
                        } else {
                            for oy in 0..oh {
                                let base = (oy * dd.stride + ky) * pw + kx;
                                for ox in 0..ow {
                                    acc += go[oy * ow + ox] * xc[base + ox * dd.stride];
                                }
                            }
                        }
                        gw[(ci * dd.kh + ky) * dd.kw + kx] += acc;
                    }
                }
            }
        }
    });
    g_w
}

/// Gradient w.r.t. the convolution bias: sum of g_out over (n, oh, ow).
pub fn conv2d_bias_grad(g_out: &[f32], c_out: usize, spatial: usize, n: usize) -> Vec<f32> {
    let mut g_b = vec![0.0f32; c_out];
    for ni in 0..n {
        for co in 0..c_out {
            let s = (ni * c_out + co) * spatial;
            let mut acc = 0.0f64;
            for &g in &g_out[s..s + spatial] {
                acc += g as f64;
            }
            g_b[co] += acc as f32;
        }
    }
    g_b
}

/// Transposed convolution: x (n, c_in, h, w) * w (c_in, c_out, kh, kw) -> (n, c_out, oh, ow).
///
/// Adjoint of [`conv2d_forward`] with the same stride/pad and a shared weight
/// tensor (the conv reads it as (c_out, c_in, ..); here c_in plays the conv's
/// c_out role).
pub fn conv_transpose2d_forward(
    x: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    d: &ConvDims,
) -> Vec<f32> {
    let (oh, ow) = d.tconv_out_hw();
    // scatter into the unclipped extent, then crop `pad` from each border
    let (fh, fw) = ((d.h - 1) * d.stride + d.kh, (d.w - 1) * d.stride + d.kw);
    let fplane = fh * fw;

    let mut full = vec![0.0f32; d.n * d.c_out * fplane];
    let dd = *d;
    par::for_each_chunk(&mut full, d.c_out * fplane, move |n, fp| {
        for ci in 0..dd.c_in {
            let xc = &x[(n * dd.c_in + ci) * dd.h * dd.w..(n * dd.c_in + ci + 1) * dd.h * dd.w];
            for co in 0..dd.c_out {
                let fc = &mut fp[co * fplane..(co + 1) * fplane];
                for ky in 0..dd.kh {
                    for kx in 0..dd.kw {
                        let wv = weight[((ci * dd.c_out + co) * dd.kh + ky) * dd.kw + kx];
                        if dd.stride == 1 {
                            for iy in 0..dd.h {
                                let xrow = &xc[iy * dd.w..(iy + 1) * dd.w];
                                let base = (iy + ky) * fw + kx;
                                let frow = &mut fc[base..base + dd.w];
                                for (o, &v) in frow.iter_mut().zip(xrow) {
                                    *o += wv * v;
                                }
                            }
                        } else {
                            for iy in 0..dd.h {
                                let base = (iy * dd.stride + ky) * fw + kx;
                                for ix in 0..dd.w {
                                    fc[base + ix * dd.stride] += wv * xc[iy * dd.w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    let mut out = vec![0.0f32; d.n * d.c_out * oh * ow];
    for n in 0..d.n {
        for co in 0..d.c_out {
            let b = bias.map_or(0.0, |b| b[co]);
            for y in 0..oh {
                let s = (n * d.c_out + co) * fplane + (y + d.pad) * fw + d.pad;
                let t = (n * d.c_out + co) * oh * ow + y * ow;
                for x in 0..ow {
                    out[t + x] = full[s + x] + b;
                }
            }
        }
    }
    out
}

/// Gradient w.r.t. the transposed-convolution input: a forward convolution of
/// the (padded) output gradient with the same weight tensor.
pub fn conv_transpose2d_input_grad(g_out: &[f32], weight: &[f32], d: &ConvDims) -> Vec<f32> {
    let (oh, ow) = d.tconv_out_hw();
    let back = ConvDims {
        n: d.n,
        c_in: d.c_out,
        h: oh,
        w: ow,
        c_out: d.c_in,
        kh: d.kh,
        kw: d.kw,
        stride: d.stride,
        pad: d.pad,
    };
    conv2d_forward(g_out, weight, None, &back)
}

/// Gradient w.r.t. the transposed-convolution weights.
pub fn conv_transpose2d_weight_grad(x: &[f32], g_out: &[f32], d: &ConvDims) -> Vec<f32> {
    let (oh, ow) = d.tconv_out_hw();
    let (ph, pw) = (oh + 2 * d.pad, ow + 2 * d.pad);
    let plane = ph * pw;

    let mut g_pad = vec![0.0f32; d.n * d.c_out * plane];
    for n in 0..d.n {
        pad_plane(
            &g_out[n * d.c_out * oh * ow..(n + 1) * d.c_out * oh * ow],
            d.c_out,
            oh,
            ow,
            d.pad,
            &mut g_pad[n * d.c_out * plane..(n + 1) * d.c_out * plane],
        );
    }

    let mut g_w = vec![0.0f32; d.c_in * d.c_out * d.kh * d.kw];
    let dd = *d;
    par::for_each_chunk(&mut g_w, d.c_out * d.kh * d.kw, move |ci, gw| {
        for n in 0..dd.n {
            let xc = &x[(n * dd.c_in + ci) * dd.h * dd.w..(n * dd.c_in + ci + 1) * dd.h * dd.w];
            for co in 0..dd.c_out {
                let gc = &g_pad[(n * dd.c_out + co) * plane..(n * dd.c_out + co + 1) * plane];
                for ky in 0..dd.kh {
                    for kx in 0..dd.kw {
                        let mut acc = 0.0f32;
                        for iy in 0..dd.h {
                            let base = (iy * dd.stride + ky) * pw + kx;
                            if dd.stride == 1 {
                                let grow = &gc[base..base + dd.w];
                                let xrow = &xc[iy * dd.w..(iy + 1) * dd.w];
                                for (&g, &v) in grow.iter().zip(xrow) {
                                    acc += g * v;
                                }
                            } else {
                                for ix in 0..dd.w {
                                    acc += gc[base + ix * dd.stride] * xc[iy * dd.w + ix];
                                }
                            }
                        }
                        gw[(co * dd.kh + ky) * dd.kw + kx] += acc;
                    }
                }
            }
        }
    });
    g_w
}

/// Bias gradient for the transposed convolution.
pub fn conv_transpose2d_bias_grad(g_out: &[f32], c_out: usize, spatial: usize, n: usize) -> Vec<f32> {
    conv2d_bias_grad(g_out, c_out, spatial, n)
}
