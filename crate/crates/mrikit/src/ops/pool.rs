//! Pooling kernels. Windows tile the image with stride = window and are
//! clipped at the right/bottom borders; max ties resolve to the first index
//! in scan order.

/// Pooled output extent for one axis.
pub fn pooled_extent(extent: usize, window: usize) -> usize {
    extent.div_ceil(window)
}

/// Max pool over (n, c, h, w). Returns the pooled values and, for each output
/// element, the flat (h, w) index of its source pixel.
pub fn max_pool_forward(
    x: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
) -> (Vec<f32>, Vec<usize>) {
    let (oh, ow) = (pooled_extent(h, window), pooled_extent(w, window));
    let mut out = vec![0.0f32; n * c * oh * ow];
    let mut arg = vec![0usize; n * c * oh * ow];
    for plane in 0..n * c {
        let xc = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * window, ox * window);
                let (y1, x1) = ((y0 + window).min(h), (x0 + window).min(w));
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = y0 * w + x0;
                for y in y0..y1 {
                    for x_ in x0..x1 {
                        let v = xc[y * w + x_];
                        if v > best {
                            best = v;
                            best_idx = y * w + x_;
                        }
                    }
                }
                out[plane * oh * ow + oy * ow + ox] = best;
                arg[plane * oh * ow + oy * ow + ox] = best_idx;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward(
    g_out: &[f32],
    arg: &[usize],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
) -> Vec<f32> {
    let (oh, ow) = (pooled_extent(h, window), pooled_extent(w, window));
    let mut g_in = vec![0.0f32; n * c * h * w];
    for plane in 0..n * c {
        for o in 0..oh * ow {
            g_in[plane * h * w + arg[plane * oh * ow + o]] += g_out[plane * oh * ow + o];
        }
    }
    g_in
}

pub fn avg_pool_forward(x: &[f32], n: usize, c: usize, h: usize, w: usize, window: usize) -> Vec<f32> {
    let (oh, ow) = (pooled_extent(h, window), pooled_extent(w, window));
    let mut out = vec![0.0f32; n * c * oh * ow];
    for plane in 0..n * c {
        let xc = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * window, ox * window);
                let (y1, x1) = ((y0 + window).min(h), (x0 + window).min(w));
                let mut acc = 0.0f64;
                for y in y0..y1 {
                    for x_ in x0..x1 {
                        acc += xc[y * w + x_] as f64;
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                out[plane * oh * ow + oy * ow + ox] = (acc / count) as f32;
            }
        }
    }
    out
}

pub fn avg_pool_backward(
    g_out: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
) -> Vec<f32> {
    let (oh, ow) = (pooled_extent(h, window), pooled_extent(w, window));
    let mut g_in = vec![0.0f32; n * c * h * w];
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * window, ox * window);
                let (y1, x1) = ((y0 + window).min(h), (x0 + window).min(w));
                let g = g_out[plane * oh * ow + oy * ow + ox] / ((y1 - y0) * (x1 - x0)) as f32;
                for y in y0..y1 {
                    for x_ in x0..x1 {
                        g_in[plane * h * w + y * w + x_] += g;
                    }
                }
            }
        }
    }
    g_in
}

/// Global average pool (n, c, h, w) -> (n, c).
pub fn global_avg_pool_forward(x: &[f32], n: usize, c: usize, spatial: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * c];
    for plane in 0..n * c {
        let mut acc = 0.0f64;
        for &v in &x[plane * spatial..(plane + 1) * spatial] {
            acc += v as f64;
        }
        out[plane] = (acc / spatial as f64) as f32;
    }
    out
}

pub fn global_avg_pool_backward(g_out: &[f32], n: usize, c: usize, spatial: usize) -> Vec<f32> {
    let mut g_in = vec![0.0f32; n * c * spatial];
    for plane in 0..n * c {
        let g = g_out[plane] / spatial as f32;
        g_in[plane * spatial..(plane + 1) * spatial].fill(g);
    }
    g_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_picks_max_and_first_index_on_tie() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let (out, arg) = max_pool_forward(&x, 1, 1, 2, 2, 2);
        assert_eq!(out, vec![4.0]);
        assert_eq!(arg, vec![3]);

        let tied = vec![5.0, 5.0, 5.0, 5.0];
        let (_, arg) = max_pool_forward(&tied, 1, 1, 2, 2, 2);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn clipped_window_uses_actual_count() {
        // 1x3 image, window 2: second window holds a single pixel
        let x = vec![1.0, 3.0, 5.0];
        let out = avg_pool_forward(&x, 1, 1, 1, 3, 2);
        assert_eq!(out, vec![2.0, 5.0]);
    }

    #[test]
    fn global_avg_matches_full_window_avg() {
        let x: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let g = global_avg_pool_forward(&x, 1, 1, 16);
        let a = avg_pool_forward(&x, 1, 1, 4, 4, 4);
        assert_eq!(g, a);
    }
}
