//! Heatmap overlay rendering: grayscale base blended with a perceptually
//! ordered colormap.

use crate::{Error, Result, Tensor};
use image::RgbImage;

/// Heat blend weight; the remainder stays grayscale base.
pub const OVERLAY_BLEND: f32 = 0.4;

/// Viridis anchor colors, linearly interpolated.
const VIRIDIS: [[f32; 3]; 10] = [
    [68.0, 1.0, 84.0],
    [72.0, 40.0, 120.0],
    [62.0, 74.0, 137.0],
    [49.0, 104.0, 142.0],
    [38.0, 130.0, 142.0],
    [31.0, 158.0, 137.0],
    [53.0, 183.0, 121.0],
    [109.0, 205.0, 89.0],
    [180.0, 222.0, 44.0],
    [253.0, 231.0, 37.0],
];

fn colormap(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f32;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f32;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [
        a[0] + f * (b[0] - a[0]),
        a[1] + f * (b[1] - a[1]),
        a[2] + f * (b[2] - a[2]),
    ]
}

/// Blend one attribution slice over its grayscale slice.
///
/// The map is min-max normalized per slice; a constant map renders as
/// zero-intensity heat rather than dividing by zero.
pub fn render_overlay(map: &Tensor, image: &Tensor) -> Result<RgbImage> {
    if map.shape() != image.shape() {
        return Err(Error::shape(
            "overlay",
            format!("map {:?} vs image {:?}", map.shape(), image.shape()),
        ));
    }
    let (h, w) = image.dims2()?;
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;

    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let base = image.data()[y * w + x].clamp(0.0, 1.0) * 255.0;
            let heat = if span > 0.0 { (map.data()[y * w + x] - lo) / span } else { 0.0 };
            let c = colormap(heat);
            let px = [
                ((1.0 - OVERLAY_BLEND) * base + OVERLAY_BLEND * c[0]).round() as u8,
                ((1.0 - OVERLAY_BLEND) * base + OVERLAY_BLEND * c[1]).round() as u8,
                ((1.0 - OVERLAY_BLEND) * base + OVERLAY_BLEND * c[2]).round() as u8,
            ];
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(out)
}
