//! Bilinear upsampling with align-corners semantics: corner pixels of the
//! output map exactly onto corner pixels of the input.

/// Interpolation source for one output coordinate.
#[inline]
fn src_coord(o: usize, out_extent: usize, in_extent: usize) -> (usize, usize, f32) {
    if out_extent == 1 || in_extent == 1 {
        return (0, 0, 0.0);
    }
    let s = o as f64 * (in_extent - 1) as f64 / (out_extent - 1) as f64;
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(in_extent - 1);
    (lo, hi, (s - lo as f64) as f32)
}

/// Upsample (n, c, h, w) by an integer factor on both spatial axes.
pub fn upsample_bilinear_forward(
    x: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<f32> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0f32; n * c * oh * ow];
    for plane in 0..n * c {
        let xc = &x[plane * h * w..(plane + 1) * h * w];
        let oc = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1, fy) = src_coord(oy, oh, h);
            for ox in 0..ow {
                let (x0, x1, fx) = src_coord(ox, ow, w);
                let v = xc[y0 * w + x0] * (1.0 - fy) * (1.0 - fx)
                    + xc[y0 * w + x1] * (1.0 - fy) * fx
                    + xc[y1 * w + x0] * fy * (1.0 - fx)
                    + xc[y1 * w + x1] * fy * fx;
                oc[oy * ow + ox] = v;
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear_forward`]: scatter output gradients back
/// through the same interpolation weights.
pub fn upsample_bilinear_backward(
    g_out: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<f32> {
    let (oh, ow) = (h * factor, w * factor);
    let mut g_in = vec![0.0f32; n * c * h * w];
    for plane in 0..n * c {
        let gc = &g_out[plane * oh * ow..(plane + 1) * oh * ow];
        let gi = &mut g_in[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, fy) = src_coord(oy, oh, h);
            for ox in 0..ow {
                let (x0, x1, fx) = src_coord(ox, ow, w);
                let g = gc[oy * ow + ox];
                gi[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                gi[y0 * w + x1] += g * (1.0 - fy) * fx;
                gi[y1 * w + x0] += g * fy * (1.0 - fx);
                gi[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    g_in
}
