//! PSNR and windowed SSIM over 2-d grayscale images.

use crate::{Error, Result, Tensor};

/// 10 * log10(peak^2 / MSE) in decibels; identical images yield `inf`.
pub fn psnr(reference: &Tensor, test: &Tensor, peak: f64) -> Result<f64> {
    if reference.shape() != test.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{:?} vs {:?}", reference.shape(), test.shape()),
        ));
    }
    if peak <= 0.0 {
        return Err(Error::InvalidArgument(format!("psnr peak {peak}")));
    }
    let mut acc = 0.0f64;
    for (&a, &b) in reference.data().iter().zip(test.data()) {
        let d = a as f64 - b as f64;
        acc += d * d;
    }
    let mse = acc / reference.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// SSIM window and stabilizer parameters.
///
/// Defaults follow the canonical parameterization: 11x11 Gaussian window of
/// width 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2.
#[derive(Debug, Clone)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub dynamic_range: f64,
}

impl SsimParams {
    pub fn for_range(l: f64) -> Self {
        SsimParams {
            window_size: 11,
            sigma: 1.5,
            c1: (0.01 * l).powi(2),
            c2: (0.03 * l).powi(2),
            dynamic_range: l,
        }
    }
}

impl Default for SsimParams {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable filter: horizontal then vertical pass.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let ks = k.len();
    let (oh, ow) = (h - ks + 1, w - ks + 1);
    let mut tmp = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * img[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over sliding Gaussian windows (valid mode).
pub fn ssim(reference: &Tensor, test: &Tensor, params: &SsimParams) -> Result<f64> {
    if reference.shape() != test.shape() {
        return Err(Error::shape(
            "ssim",
            format!("{:?} vs {:?}", reference.shape(), test.shape()),
        ));
    }
    if params.window_size % 2 == 0 {
        return Err(Error::InvalidArgument("ssim window size must be odd".into()));
    }
    let (h, w) = reference.dims2()?;
    if h < params.window_size || w < params.window_size {
        return Err(Error::shape(
            "ssim",
            format!("image {h}x{w} smaller than window {}", params.window_size),
        ));
    }

    let x: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = test.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let k = gaussian_kernel(params.window_size, params.sigma);
    let mu_x = filter_valid(&x, h, w, &k);
    let mu_y = filter_valid(&y, h, w, &k);
    let e_xx = filter_valid(&xx, h, w, &k);
    let e_yy = filter_valid(&yy, h, w, &k);
    let e_xy = filter_valid(&xy, h, w, &k);

    let (c1, c2) = (params.c1, params.c2);
    let mut acc = 0.0f64;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cxy = e_xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(acc / mu_x.len() as f64)
}
