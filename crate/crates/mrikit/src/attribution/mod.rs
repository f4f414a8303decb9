//! Gradient attribution: saliency, SmoothGrad, guided backpropagation,
//! Grad-CAM and guided Grad-CAM, as pure functions over a model, a tap and a
//! volume. Guided rules are per-call backward overrides; the model and its
//! learned parameters are never touched.

mod localization;
mod overlay;

pub use localization::localization_energy;
pub use overlay::{render_overlay, OVERLAY_BLEND};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Volume;
use crate::models::{mse_loss, Model};
use crate::nn::Phase;
use crate::ops::resample;
use crate::tensor::{GradGraph, GradMode, Value};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Saliency,
    Smoothgrad,
    GuidedBackprop,
    Gradcam,
    GuidedGradcam,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Saliency,
        Method::Smoothgrad,
        Method::GuidedBackprop,
        Method::Gradcam,
        Method::GuidedGradcam,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::Smoothgrad => "smoothgrad",
            Method::GuidedBackprop => "guided_backprop",
            Method::Gradcam => "gradcam",
            Method::GuidedGradcam => "guided_gradcam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// The scalar the gradients flow from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Pre-sigmoid classification score (classifiers and the hybrid).
    ClassLogit,
    /// Reconstruction MSE against the input (reconstruction models).
    ReconLoss,
    /// Sum of the tapped layer's activations.
    LatentEnergy,
}

impl Target {
    pub fn default_for(model: &Model) -> Target {
        if model.is_classifier() {
            Target::ClassLogit
        } else {
            Target::LatentEnergy
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "class_logit" => Ok(Target::ClassLogit),
            "recon_loss" => Ok(Target::ReconLoss),
            "latent_energy" => Ok(Target::LatentEnergy),
            _ => Err(Error::InvalidArgument(format!("unknown target {s:?}"))),
        }
    }
}

/// Per-slice heatmaps at input resolution.
#[derive(Debug, Clone)]
pub struct AttributionMap {
    pub method: Method,
    pub per_slice: Vec<Tensor>,
    /// (min, max) over all slices before any normalization.
    pub value_range: (f32, f32),
}

impl AttributionMap {
    fn from_slices(method: Method, per_slice: Vec<Tensor>) -> Self {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for s in &per_slice {
            for &v in s.data() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if per_slice.is_empty() {
            (lo, hi) = (0.0, 0.0);
        }
        AttributionMap { method, per_slice, value_range: (lo, hi) }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmoothGradParams {
    pub n: usize,
    /// Noise standard deviation as a fraction of the input value range.
    pub sigma: f32,
}

impl Default for SmoothGradParams {
    fn default() -> Self {
        SmoothGradParams { n: 25, sigma: 0.15 }
    }
}

fn check_target(model: &Model, target: Target) -> Result<()> {
    let mismatch = |t: &str| Error::TargetMismatch {
        target: t.into(),
        architecture: model.spec.architecture.name().into(),
    };
    match target {
        Target::ClassLogit if !model.is_classifier() => Err(mismatch("class_logit")),
        Target::ReconLoss if !model.has_reconstruction() => Err(mismatch("recon_loss")),
        _ => Ok(()),
    }
}

/// Run forward on `volume` (input tracked) and return the target scalar.
fn build_target(
    model: &Model,
    g: &mut GradGraph,
    volume: &Volume,
    target: Target,
    tap: &str,
) -> Result<(Value, Value)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward_volume(g, volume, Phase::Eval, &mut rng, true)?;
    let scalar = match target {
        Target::ClassLogit => out.logit.expect("checked classifier"),
        Target::ReconLoss => {
            let recon = out.recon.expect("checked reconstruction");
            let reference = g.constant(volume.as_batch());
            mse_loss(g, recon, reference)?
        }
        Target::LatentEnergy => {
            let tapped = g
                .named(tap)
                .or_else(|| g.named(&format!("{tap}.s0")))
                .ok_or_else(|| Error::UnknownLayer {
                    name: tap.to_string(),
                    available: model.layer_names(),
                })?;
            // per-slice tap nodes: sum them all
            if g.named(tap).is_some() {
                g.sum_all(tapped)
            } else {
                let mut acc = g.sum_all(tapped);
                for k in 1..volume.slices() {
                    let node = g
                        .named(&format!("{tap}.s{k}"))
                        .ok_or_else(|| Error::TapNotPopulated(format!("{tap}.s{k}")))?;
                    let s = g.sum_all(node);
                    acc = g.add(acc, s)?;
                }
                acc
            }
        }
    };
    Ok((out.input, scalar))
}

/// |d target / d input| per pixel, split into per-slice maps.
fn input_gradient_map(
    model: &Model,
    volume: &Volume,
    target: Target,
    mode: GradMode,
) -> Result<Vec<Tensor>> {
    check_target(model, target)?;
    let tap = model.default_tap();
    let mut g = GradGraph::new();
    let (input, scalar) = build_target(model, &mut g, volume, target, tap)?;
    g.backward_mode(scalar, mode)?;
    let grad = g.grad(input).ok_or(Error::DetachedGraph)?;
    let (h, w) = volume.hw();
    let per_slice = (0..volume.slices())
        .map(|k| {
            Tensor::from_vec(
                &[h, w],
                grad[k * h * w..(k + 1) * h * w].iter().map(|v| v.abs()).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_slice)
}

/// Gradient of the target with respect to the input pixels, elementwise
/// absolute value.
pub fn saliency(model: &Model, volume: &Volume, target: Target) -> Result<AttributionMap> {
    let maps = input_gradient_map(model, volume, target, GradMode::Standard)?;
    Ok(AttributionMap::from_slices(Method::Saliency, maps))
}

/// Mean saliency over `n` noise-perturbed copies of the input; noise is
/// Gaussian with standard deviation `sigma` times the input value range.
pub fn smoothgrad(
    model: &Model,
    volume: &Volume,
    params: &SmoothGradParams,
    seed: u64,
    target: Target,
) -> Result<AttributionMap> {
    if params.n < 1 {
        return Err(Error::InvalidArgument("smoothgrad needs n >= 1".into()));
    }
    if params.sigma < 0.0 {
        return Err(Error::InvalidArgument("smoothgrad sigma must be >= 0".into()));
    }
    let (lo, hi) = volume
        .data
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let noise_sd = params.sigma * (hi - lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = volume.hw();

    let mut acc = vec![vec![0.0f64; h * w]; volume.slices()];
    for _ in 0..params.n {
        let noisy = if noise_sd > 0.0 {
            let mut v = volume.clone();
            let data = v.data.data_mut();
            for x in data.iter_mut() {
                *x += noise_sd * gauss(&mut rng);
            }
            v
        } else {
            volume.clone()
        };
        let maps = input_gradient_map(model, &noisy, target, GradMode::Standard)?;
        for (a, m) in acc.iter_mut().zip(&maps) {
            for (s, &v) in a.iter_mut().zip(m.data()) {
                *s += v as f64;
            }
        }
    }
    let per_slice = acc
        .into_iter()
        .map(|a| {
            Tensor::from_vec(&[h, w], a.into_iter().map(|v| (v / params.n as f64) as f32).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributionMap::from_slices(Method::Smoothgrad, per_slice))
}

/// Saliency under the guided rule: rectifiers zero negative upstream
/// gradients for this call only.
pub fn guided_backprop(model: &Model, volume: &Volume, target: Target) -> Result<AttributionMap> {
    let maps = input_gradient_map(model, volume, target, GradMode::Guided)?;
    Ok(AttributionMap::from_slices(Method::GuidedBackprop, maps))
}

/// Per-slice coarse maps (pre-upsampling) and upsampled maps.
pub struct GradcamParts {
    pub coarse: Vec<Tensor>,
    pub upsampled: Vec<Tensor>,
}

/// Channel weights are the spatial mean of the tapped layer's gradients; the
/// map is the rectified channel-weighted activation sum, bilinearly
/// upsampled to the input extent.
pub fn gradcam_parts(
    model: &Model,
    volume: &Volume,
    target: Target,
    tap: Option<&str>,
) -> Result<GradcamParts> {
    check_target(model, target)?;
    let tap = match tap {
        Some(name) => model.register_tap(name)?,
        None => model.default_tap().to_string(),
    };
    let mut g = GradGraph::new();
    let (_, scalar) = build_target(model, &mut g, volume, target, &tap)?;
    g.backward(scalar)?;

    let records = collect_tap_slices(&g, &tap, volume.slices())?;
    let (h, w) = volume.hw();
    let mut coarse = Vec::with_capacity(records.len());
    let mut upsampled = Vec::with_capacity(records.len());
    for (acts, grads) in records {
        let (c, gh, gw) = acts.dims3()?;
        let spatial = gh * gw;
        let mut map = vec![0.0f32; spatial];
        for ch in 0..c {
            let a = &acts.data()[ch * spatial..(ch + 1) * spatial];
            let gr = &grads.data()[ch * spatial..(ch + 1) * spatial];
            let alpha = (gr.iter().map(|&v| v as f64).sum::<f64>() / spatial as f64) as f32;
            for (m, &av) in map.iter_mut().zip(a) {
                *m += alpha * av;
            }
        }
        for m in &mut map {
            *m = m.max(0.0);
        }
        if h % gh != 0 || w % gw != 0 {
            return Err(Error::shape(
                "gradcam",
                format!("tap extent {gh}x{gw} does not divide input {h}x{w}"),
            ));
        }
        let up = resample::upsample_bilinear_forward(&map, 1, 1, gh, gw, h / gh);
        coarse.push(Tensor::from_vec(&[gh, gw], map)?);
        upsampled.push(Tensor::from_vec(&[h, w], up)?);
    }
    Ok(GradcamParts { coarse, upsampled })
}

pub fn gradcam(
    model: &Model,
    volume: &Volume,
    target: Target,
    tap: Option<&str>,
) -> Result<AttributionMap> {
    let parts = gradcam_parts(model, volume, target, tap)?;
    Ok(AttributionMap::from_slices(Method::Gradcam, parts.upsampled))
}

/// Elementwise product of the upsampled Grad-CAM map and the guided
/// backpropagation map.
pub fn guided_gradcam(
    model: &Model,
    volume: &Volume,
    target: Target,
    tap: Option<&str>,
) -> Result<AttributionMap> {
    let cam = gradcam(model, volume, target, tap)?;
    let guided = guided_backprop(model, volume, target)?;
    let per_slice = cam
        .per_slice
        .iter()
        .zip(&guided.per_slice)
        .map(|(c, g)| {
            Tensor::from_vec(
                c.shape(),
                c.data().iter().zip(g.data()).map(|(a, b)| a * b).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributionMap::from_slices(Method::GuidedGradcam, per_slice))
}

/// Dispatch by method name; smoothgrad uses its defaults.
pub fn attribute(
    model: &Model,
    volume: &Volume,
    method: Method,
    target: Target,
    seed: u64,
    tap: Option<&str>,
) -> Result<AttributionMap> {
    match method {
        Method::Saliency => saliency(model, volume, target),
        Method::Smoothgrad => smoothgrad(model, volume, &SmoothGradParams::default(), seed, target),
        Method::GuidedBackprop => guided_backprop(model, volume, target),
        Method::Gradcam => gradcam(model, volume, target, tap),
        Method::GuidedGradcam => guided_gradcam(model, volume, target, tap),
    }
}

/// Read per-slice (activations, gradients) for a tap that is either one
/// batched (s, c, h, w) node or per-slice nodes named `{tap}.s{k}`.
fn collect_tap_slices(g: &GradGraph, tap: &str, s: usize) -> Result<Vec<(Tensor, Tensor)>> {
    if g.named(tap).is_some() {
        let rec = g.tap_record(tap)?;
        let (n, c, h, w) = rec.activations.dims4()?;
        if n != s {
            return Err(Error::shape("gradcam", format!("tap batch {n} vs {s} slices")));
        }
        let plane = c * h * w;
        (0..s)
            .map(|k| {
                let a = Tensor::from_vec(
                    &[c, h, w],
                    rec.activations.data()[k * plane..(k + 1) * plane].to_vec(),
                )?;
                let gr = Tensor::from_vec(
                    &[c, h, w],
                    rec.upstream_grad.data()[k * plane..(k + 1) * plane].to_vec(),
                )?;
                Ok((a, gr))
            })
            .collect()
    } else {
        (0..s)
            .map(|k| {
                let rec = g.tap_record(&format!("{tap}.s{k}"))?;
                let (n, c, h, w) = rec.activations.dims4()?;
                debug_assert_eq!(n, 1);
                let a = Tensor::from_vec(&[c, h, w], rec.activations.data().to_vec())?;
                let gr = Tensor::from_vec(&[c, h, w], rec.upstream_grad.data().to_vec())?;
                Ok((a, gr))
            })
            .collect()
    }
}

fn gauss(rng: &mut impl Rng) -> f32 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}
