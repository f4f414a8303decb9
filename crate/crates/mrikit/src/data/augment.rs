//! Per-volume training augmentation: rotation about the slice center, then a
//! sub-pixel shift, then an optional horizontal flip. One transform is drawn
//! per volume and applied identically to every slice and to the ROI mask
//! (bilinear for intensities, nearest for the mask; out-of-frame pixels are
//! zero).

use super::Volume;
use crate::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    pub max_rotation_deg: f32,
    pub max_shift_px: f32,
    pub flip_probability: f64,
}

impl AugmentParams {
    /// Rotation up to 25 degrees, shifts up to 25 px at a 256-pixel edge
    /// (scaled proportionally), flips with probability one half.
    pub fn defaults_for_edge(edge: usize) -> Self {
        AugmentParams {
            max_rotation_deg: 25.0,
            max_shift_px: 25.0 * edge as f32 / 256.0,
            flip_probability: 0.5,
        }
    }

    pub fn identity() -> Self {
        AugmentParams { max_rotation_deg: 0.0, max_shift_px: 0.0, flip_probability: 0.0 }
    }
}

pub fn augment(volume: &Volume, params: &AugmentParams, seed: u64) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = if params.max_rotation_deg > 0.0 {
        rng.gen_range(-params.max_rotation_deg..=params.max_rotation_deg)
    } else {
        0.0
    };
    let (sx, sy) = if params.max_shift_px > 0.0 {
        (
            rng.gen_range(-params.max_shift_px..=params.max_shift_px),
            rng.gen_range(-params.max_shift_px..=params.max_shift_px),
        )
    } else {
        (0.0, 0.0)
    };
    let flip = rng.gen::<f64>() < params.flip_probability;
    apply(volume, angle, sx, sy, flip)
}

/// Apply a fixed transform (exposed so tests can pin the draw).
pub fn apply(volume: &Volume, angle_deg: f32, shift_x: f32, shift_y: f32, flip: bool) -> Result<Volume> {
    let (h, w) = volume.hw();
    let s = volume.slices();
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let rad = angle_deg.to_radians();
    let (cos, sin) = (rad.cos(), rad.sin());

    let mut out = vec![0.0f32; s * h * w];
    let mut out_mask = volume.roi_mask.as_ref().map(|_| vec![0u8; s * h * w]);

    for k in 0..s {
        let src = &volume.data.data()[k * h * w..(k + 1) * h * w];
        let msrc = volume.roi_mask.as_ref().map(|m| &m[k * h * w..(k + 1) * h * w]);
        for y in 0..h {
            for x in 0..w {
                // invert: un-shift, then un-rotate about the center
                let px = x as f32 - shift_x - cx;
                let py = y as f32 - shift_y - cy;
                let qx = cos * px + sin * py + cx;
                let qy = -sin * px + cos * py + cy;

                let dst = k * h * w + y * w + if flip { w - 1 - x } else { x };
                out[dst] = bilinear(src, h, w, qx, qy);
                if let (Some(m), Some(om)) = (msrc, out_mask.as_mut()) {
                    om[dst] = nearest(m, h, w, qx, qy);
                }
            }
        }
    }

    Ok(Volume {
        patient_id: volume.patient_id.clone(),
        plane: volume.plane,
        data: Tensor::from_vec(&[s, h, w], out)?,
        label: volume.label,
        roi_mask: out_mask,
    })
}

fn bilinear(src: &[f32], h: usize, w: usize, x: f32, y: f32) -> f32 {
    if x < -1.0 || y < -1.0 || x > w as f32 || y > h as f32 {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let sample = |yy: f32, xx: f32| -> f32 {
        if xx < 0.0 || yy < 0.0 || xx >= w as f32 || yy >= h as f32 {
            0.0
        } else {
            src[yy as usize * w + xx as usize]
        }
    };
    sample(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + sample(y0, x0 + 1.0) * (1.0 - fy) * fx
        + sample(y0 + 1.0, x0) * fy * (1.0 - fx)
        + sample(y0 + 1.0, x0 + 1.0) * fy * fx
}

fn nearest(src: &[u8], h: usize, w: usize, x: f32, y: f32) -> u8 {
    let xi = x.round();
    let yi = y.round();
    if xi < 0.0 || yi < 0.0 || xi >= w as f32 || yi >= h as f32 {
        0
    } else {
        src[yi as usize * w + xi as usize]
    }
}
