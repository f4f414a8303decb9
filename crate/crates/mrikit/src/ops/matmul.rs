//! Row-major matrix multiplication kernels.

use crate::par;

// below this many multiply-adds the rayon dispatch overhead dominates
const PAR_THRESHOLD: usize = 1 << 15;

/// out (m, n) = a (m, k) * b (k, n)
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    if m * k * n >= PAR_THRESHOLD {
        par::for_each_chunk(&mut out, n, |i, row| mul_row(a, b, k, n, i, row));
    } else {
        for i in 0..m {
            mul_row(a, b, k, n, i, &mut out[i * n..(i + 1) * n]);
        }
    }
    out
}

#[inline]
fn mul_row(a: &[f32], b: &[f32], k: usize, n: usize, i: usize, row: &mut [f32]) {
    for kk in 0..k {
        let av = a[i * k + kk];
        let brow = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in row.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// Gradient w.r.t. `a`: g (m, n) * b^T -> (m, k)
pub fn matmul_grad_a(g: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0f32;
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * k + kk] = acc;
        }
    }
    out
}

/// Gradient w.r.t. `b`: a^T * g -> (k, n)
pub fn matmul_grad_b(a: &[f32], g: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// transpose (rows, cols) -> (cols, rows)
pub fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
