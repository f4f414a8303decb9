//! Synthetic knee-phantom volumes with ground-truth lesion masks.
//!
//! A phantom slice is a stack of concentric soft-tissue ellipses with two
//! wedge-shaped bands standing in for the menisci. A positive volume carries
//! a bright notch inserted into one band across a contiguous run of slices;
//! the ROI mask marks exactly those pixels. Geometry, intensities and noise
//! all derive from (seed, index), so generation is reproducible and
//! embarrassingly parallel.

use super::{Plane, Volume};
use crate::seed;
use crate::{Error, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomParams {
    /// Slice edge in pixels (square slices). Must be divisible by 16 so every
    /// U-Net depth in the zoo divides it.
    pub edge: usize,
    pub s_range: (usize, usize),
    pub lesion_probability: f64,
    /// Lesion radius range in pixels.
    pub lesion_radius: (f64, f64),
    /// Additive Gaussian noise standard deviation.
    pub noise_level: f32,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            edge: 64,
            s_range: (4, 8),
            lesion_probability: 0.35,
            lesion_radius: (2.5, 4.5),
            noise_level: 0.02,
            seed: 0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.edge == 0 || self.edge % 16 != 0 {
            return Err(Error::InvalidArgument(format!(
                "phantom edge {} must be a positive multiple of 16",
                self.edge
            )));
        }
        if self.s_range.0 == 0 || self.s_range.0 > self.s_range.1 {
            return Err(Error::InvalidArgument(format!("bad slice range {:?}", self.s_range)));
        }
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return Err(Error::InvalidArgument(format!(
                "lesion probability {}",
                self.lesion_probability
            )));
        }
        if self.lesion_radius.0 < 2.0 || self.lesion_radius.0 > self.lesion_radius.1 {
            return Err(Error::InvalidArgument(format!(
                "lesion radius range {:?} (minimum 2 px)",
                self.lesion_radius
            )));
        }
        if self.noise_level < 0.0 {
            return Err(Error::InvalidArgument("negative noise level".into()));
        }
        Ok(())
    }
}

struct Geometry {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    tissue: [f32; 3],
    band_offset: f64,
    band_half: f64,
    band_intensity: f32,
}

pub fn generate_phantom(params: &PhantomParams, index: u64) -> Result<Volume> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(params.seed, index));
    let e = params.edge as f64;
    let s = rng.gen_range(params.s_range.0..=params.s_range.1);

    let geo = Geometry {
        cx: e * 0.5 + rng.gen_range(-0.03..0.03) * e,
        cy: e * 0.5 + rng.gen_range(-0.03..0.03) * e,
        rx: e * rng.gen_range(0.36..0.42),
        ry: e * rng.gen_range(0.40..0.46),
        tissue: [
            rng.gen_range(0.18..0.28),
            rng.gen_range(0.38..0.50),
            rng.gen_range(0.10..0.18),
        ],
        band_offset: rng.gen_range(0.40..0.50),
        band_half: e * rng.gen_range(0.035..0.055),
        band_intensity: rng.gen_range(0.55..0.70),
    };

    let positive = rng.gen::<f64>() < params.lesion_probability;
    let lesion = positive.then(|| {
        let run_len = rng.gen_range(1..=s.min(3));
        let run_start = rng.gen_range(0..=s - run_len);
        let band_sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let x_frac = rng.gen_range(-0.55..0.55);
        let radius = rng.gen_range(params.lesion_radius.0..=params.lesion_radius.1);
        let intensity = rng.gen_range(0.85..0.95) as f32;
        (run_start, run_len, band_sign, x_frac, radius, intensity)
    });

    let edge = params.edge;
    let mut data = vec![0.0f32; s * edge * edge];
    let mut mask = vec![0u8; s * edge * edge];

    for k in 0..s {
        // slices taper toward the ends of the stack like a 3-d cross-section
        let rel = if s == 1 { 0.0 } else { (k as f64 - (s - 1) as f64 / 2.0) / ((s - 1) as f64 / 2.0 + 0.5) };
        let taper = 0.75 + 0.25 * (1.0 - rel * rel).max(0.0).sqrt();
        let (rx, ry) = (geo.rx * taper, geo.ry * taper);
        let slice = &mut data[k * edge * edge..(k + 1) * edge * edge];

        for y in 0..edge {
            for x in 0..edge {
                let dx = (x as f64 - geo.cx) / rx;
                let dy = (y as f64 - geo.cy) / ry;
                let r2 = dx * dx + dy * dy;
                let mut v = 0.02f32;
                if r2 < 1.0 {
                    v = geo.tissue[0];
                }
                if r2 < 0.62 * 0.62 {
                    v = geo.tissue[1];
                }
                if r2 < 0.30 * 0.30 {
                    v = geo.tissue[2];
                }
                // two wedge bands, tapering horizontally toward the rim
                if r2 < 1.0 {
                    for sign in [-1.0f64, 1.0] {
                        let band_y = geo.cy + sign * geo.band_offset * ry;
                        let taper_w = (1.0 - (x as f64 - geo.cx).abs() / (0.80 * rx)).max(0.0);
                        if (y as f64 - band_y).abs() < geo.band_half * taper_w {
                            v = geo.band_intensity;
                        }
                    }
                }
                slice[y * edge + x] = v;
            }
        }

        if let Some((run_start, run_len, band_sign, x_frac, radius, intensity)) = lesion {
            if k >= run_start && k < run_start + run_len {
                let band_y = geo.cy + band_sign * geo.band_offset * ry;
                let lx = geo.cx + x_frac * rx;
                let mid = run_start as f64 + (run_len as f64 - 1.0) / 2.0;
                let r_k = (radius * (1.0 - 0.12 * (k as f64 - mid).abs())).max(2.0);
                let mslice = &mut mask[k * edge * edge..(k + 1) * edge * edge];
                for y in 0..edge {
                    for x in 0..edge {
                        let d2 = (x as f64 - lx).powi(2) + (y as f64 - band_y).powi(2);
                        if d2 <= r_k * r_k {
                            let f = 1.0 - 0.3 * (d2 / (r_k * r_k)) as f32;
                            slice[y * edge + x] = slice[y * edge + x].max(intensity * f);
                            mslice[y * edge + x] = 1;
                        }
                    }
                }
            }
        }
    }

    if params.noise_level > 0.0 {
        for v in &mut data {
            *v = (*v + params.noise_level * gauss(&mut rng)).clamp(0.0, 1.0);
        }
    }

    Ok(Volume {
        patient_id: format!("phantom-{index:05}"),
        plane: Plane::Sagittal,
        data: Tensor::from_vec(&[s, edge, edge], data)?,
        label: Some(positive as u8),
        roi_mask: positive.then_some(mask),
    })
}

fn gauss(rng: &mut impl Rng) -> f32 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}
