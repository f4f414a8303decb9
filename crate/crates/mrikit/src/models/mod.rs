//! The model zoo: residual and inception-style CNN classifiers, the
//! two-stage slice-sequence transformer, U-Net autoencoders and the
//! U-Net+MLP dual-task hybrid, plus losses and the Adam optimizer.

mod inception;
mod loss;
mod optim;
mod resnet;
mod unet;
mod vit;

pub use loss::{bce_loss, combined_loss, mse_loss, LossConfig};
pub use optim::Adam;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Volume;
use crate::nn::{ParamSet, Phase};
use crate::tensor::{GradGraph, ReduceKind, Value};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    ResnetTiny,
    InceptionTiny,
    VitTwoStage,
    Unet,
    UnetMlp,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::ResnetTiny => "resnet_tiny",
            Architecture::InceptionTiny => "inception_tiny",
            Architecture::VitTwoStage => "vit_two_stage",
            Architecture::Unet => "unet",
            Architecture::UnetMlp => "unet_mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    Bilinear,
    #[default]
    TransposedConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
}

pub const LEAKY_SLOPE: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlicePool {
    #[default]
    Max,
    Mean,
}

/// Transformer embedding width; divisible by every head count in the search
/// grid (4, 8, 12).
pub const VIT_WIDTH: usize = 48;
pub const VIT_PATCH: usize = 8;
pub const VIT_IMAGE_DEPTH: usize = 4;
pub const VIT_IMAGE_HEADS: usize = 4;

/// One training run's full model recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Dropout before the classifier head (residual family).
    #[serde(default = "default_dropout")]
    pub dropout_ratio: f32,
    /// Decoupled weight decay (inception family).
    #[serde(default)]
    pub reg_coeff: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Sequence-encoder depth (transformer only).
    #[serde(default = "default_depth")]
    pub transformer_depth: usize,
    /// Sequence-encoder heads (transformer only).
    #[serde(default = "default_heads")]
    pub transformer_heads: usize,
    #[serde(default)]
    pub upsampling: Upsampling,
    #[serde(default)]
    pub activation: Activation,
    /// Encoder channel plan (U-Net family), strictly increasing.
    #[serde(default = "default_channels")]
    pub base_channels: Vec<usize>,
    #[serde(default)]
    pub slice_pool: SlicePool,
    #[serde(default = "default_edge")]
    pub input_edge: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_dropout() -> f32 {
    0.5
}
fn default_epochs() -> usize {
    10
}
fn default_depth() -> usize {
    4
}
fn default_heads() -> usize {
    8
}
fn default_channels() -> Vec<usize> {
    vec![32, 64, 128]
}
fn default_edge() -> usize {
    64
}

impl ModelSpec {
    pub fn default_for(architecture: Architecture) -> Self {
        ModelSpec {
            architecture,
            learning_rate: default_lr(),
            dropout_ratio: default_dropout(),
            reg_coeff: 0.0,
            epochs: default_epochs(),
            transformer_depth: default_depth(),
            transformer_heads: default_heads(),
            upsampling: Upsampling::default(),
            activation: Activation::default(),
            base_channels: default_channels(),
            slice_pool: SlicePool::default(),
            input_edge: default_edge(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidSpec(format!("learning rate {}", self.learning_rate)));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidSpec("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::InvalidSpec(format!("dropout ratio {}", self.dropout_ratio)));
        }
        if self.reg_coeff < 0.0 {
            return Err(Error::InvalidSpec(format!("regularization coefficient {}", self.reg_coeff)));
        }
        if self.base_channels.is_empty()
            || self.base_channels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidSpec(format!(
                "base channels {:?} must be strictly increasing",
                self.base_channels
            )));
        }
        if matches!(self.architecture, Architecture::VitTwoStage) {
            if self.transformer_heads == 0 || VIT_WIDTH % self.transformer_heads != 0 {
                return Err(Error::InvalidSpec(format!(
                    "{} heads do not divide the embedding width {}",
                    self.transformer_heads, VIT_WIDTH
                )));
            }
            if self.transformer_depth == 0 {
                return Err(Error::InvalidSpec("transformer depth must be >= 1".into()));
            }
            if self.input_edge % VIT_PATCH != 0 {
                return Err(Error::InvalidSpec(format!(
                    "input edge {} not divisible by patch size {}",
                    self.input_edge, VIT_PATCH
                )));
            }
        }
        Ok(())
    }

    /// Encoder downsampling divisor for the U-Net family.
    pub fn unet_divisor(&self) -> usize {
        1 << (self.base_channels.len() - 1)
    }
}

/// Result of one volume forward pass.
pub struct ModelOutput {
    /// The bound (s, 1, h, w) input leaf.
    pub input: Value,
    /// Pre-sigmoid volume-level classification score, shape [1].
    pub logit: Option<Value>,
    /// Sigmoid probability, shape [1].
    pub probability: Option<Value>,
    /// Per-slice reconstruction, (s, 1, h, w).
    pub recon: Option<Value>,
    /// Param graph bindings, aligned with the model's [`ParamSet`].
    pub bound: Vec<Value>,
}

pub(crate) enum Kind {
    Resnet(resnet::ResnetTiny),
    Inception(inception::InceptionTiny),
    Vit(vit::VitTwoStage),
    Unet(unet::UnetNet),
}

/// A built model: spec, parameters and architecture wiring.
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
    kind: Kind,
}

/// Deterministically initialize a model from its spec and seed.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let kind = match spec.architecture {
        Architecture::ResnetTiny => {
            Kind::Resnet(resnet::ResnetTiny::build(spec, &mut params, &mut rng))
        }
        Architecture::InceptionTiny => {
            Kind::Inception(inception::InceptionTiny::build(spec, &mut params, &mut rng))
        }
        Architecture::VitTwoStage => Kind::Vit(vit::VitTwoStage::build(spec, &mut params, &mut rng)),
        Architecture::Unet | Architecture::UnetMlp => {
            Kind::Unet(unet::UnetNet::build(spec, &mut params, &mut rng))
        }
    };
    Ok(Model { spec: spec.clone(), params, kind })
}

impl Model {
    pub fn is_classifier(&self) -> bool {
        !matches!(self.spec.architecture, Architecture::Unet)
    }

    pub fn has_reconstruction(&self) -> bool {
        matches!(self.spec.architecture, Architecture::Unet | Architecture::UnetMlp)
    }

    /// Names a tap may attach to.
    pub fn layer_names(&self) -> Vec<String> {
        match &self.kind {
            Kind::Resnet(m) => m.layer_names(),
            Kind::Inception(m) => m.layer_names(),
            Kind::Vit(m) => m.layer_names(),
            Kind::Unet(m) => m.layer_names(),
        }
    }

    /// Validate a tap name against this model's graph.
    pub fn register_tap(&self, name: &str) -> Result<String> {
        let available = self.layer_names();
        if available.iter().any(|n| n == name) {
            Ok(name.to_string())
        } else {
            Err(Error::UnknownLayer { name: name.to_string(), available })
        }
    }

    /// The layer the attribution default uses: the final convolutional
    /// output feeding global average pooling for classifiers, the encoder's
    /// final convolution for reconstruction models, and the patch embedding
    /// for the transformer.
    pub fn default_tap(&self) -> &'static str {
        match &self.kind {
            Kind::Resnet(_) | Kind::Inception(_) => "backbone.out",
            Kind::Vit(_) => "image_encoder.patch_conv",
            Kind::Unet(_) => "encoder.out",
        }
    }

    /// Build the forward graph for one volume.
    ///
    /// `track_input` binds the input with gradient tracking (attribution
    /// needs input gradients; training does not).
    pub fn forward_volume(
        &self,
        g: &mut GradGraph,
        volume: &Volume,
        phase: Phase,
        rng: &mut ChaCha8Rng,
        track_input: bool,
    ) -> Result<ModelOutput> {
        if volume.slices() == 0 {
            return Err(Error::EmptyVolume);
        }
        let mut input_tensor = volume.as_batch();
        input_tensor.requires_grad = track_input;
        let input = g.leaf(&input_tensor);
        g.set_name(input, "input");
        let bound = self.params.bind(g);
        match &self.kind {
            Kind::Resnet(m) => m.forward(self, g, &bound, input, phase, rng),
            Kind::Inception(m) => m.forward(self, g, &bound, input, phase, rng),
            Kind::Vit(m) => m.forward(self, g, &bound, input, phase, rng),
            Kind::Unet(m) => m.forward(self, g, &bound, input, phase, rng),
        }
        .map(|(logit, probability, recon)| ModelOutput { input, logit, probability, recon, bound })
    }

    /// Volume-level tear probability (eval phase).
    pub fn classify_volume(&self, volume: &Volume) -> Result<f32> {
        if !self.is_classifier() {
            return Err(Error::TargetMismatch {
                target: "classification".into(),
                architecture: self.spec.architecture.name().into(),
            });
        }
        let mut g = GradGraph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_volume(&mut g, volume, Phase::Eval, &mut rng, false)?;
        let p = out.probability.expect("classifier emits probability");
        Ok(g.value(p).data()[0])
    }

    /// Reconstruct a single (h, w) slice (eval phase).
    pub fn reconstruct(&self, slice: &Tensor) -> Result<Tensor> {
        if !self.has_reconstruction() {
            return Err(Error::TargetMismatch {
                target: "reconstruction".into(),
                architecture: self.spec.architecture.name().into(),
            });
        }
        let (h, w) = slice.dims2()?;
        let volume = Volume {
            patient_id: "slice".into(),
            plane: crate::data::Plane::Sagittal,
            data: Tensor::from_vec(&[1, h, w], slice.data().to_vec())?,
            label: None,
            roi_mask: None,
        };
        let mut g = GradGraph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_volume(&mut g, &volume, Phase::Eval, &mut rng, false)?;
        let recon = out.recon.expect("reconstruction model emits recon");
        Ok(Tensor::from_vec(&[h, w], g.value(recon).data().to_vec())?)
    }
}

/// Apply the spec's activation.
pub(crate) fn activate(g: &mut GradGraph, v: Value, activation: Activation) -> Value {
    match activation {
        Activation::Relu => g.relu(v),
        Activation::LeakyRelu => g.leaky_relu(v, LEAKY_SLOPE),
    }
}

/// Shared classifier head: (s, c) per-slice features -> slice pool ->
/// linear -> sigmoid. Returns (logit, probability), both shape [1].
pub(crate) fn classifier_head(
    g: &mut GradGraph,
    bound: &[Value],
    features: Value,
    pool: SlicePool,
    head: &crate::nn::Linear,
) -> Result<(Value, Value)> {
    let reduce = match pool {
        SlicePool::Max => ReduceKind::Max,
        SlicePool::Mean => ReduceKind::Mean,
    };
    let pooled = g.reduce_rows(features, reduce)?;
    g.set_name(pooled, "features.pooled");
    let c = g.shape(pooled)[0];
    let row = g.reshape(pooled, &[1, c])?;
    let logit2 = head.forward(g, bound, row)?;
    let logit = g.reshape(logit2, &[1])?;
    g.set_name(logit, "logit");
    let prob = g.sigmoid(logit);
    g.set_name(prob, "prob");
    Ok((logit, prob))
}

/// One Adam step on one volume. The loss follows the architecture:
/// BCE for classifiers, reconstruction MSE for the pure U-Net, and the
/// combined BCE + lambda * MSE for the hybrid.
///
/// Fails with the offending step index if the loss is non-finite.
pub fn train_step(
    model: &mut Model,
    volume: &Volume,
    opt: &mut Adam,
    loss_cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
    step_index: usize,
) -> Result<f32> {
    let mut g = GradGraph::new();
    let out = model.forward_volume(&mut g, volume, Phase::Train, rng, false)?;
    let loss = build_loss(model, &mut g, &out, volume, loss_cfg)?;
    let loss_value = g.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::NonFiniteLoss { step: step_index });
    }
    g.backward(loss)?;
    let grads: Vec<Option<&[f32]>> = out.bound.iter().map(|&v| g.grad(v)).collect();
    opt.update(&mut model.params, &grads);
    Ok(loss_value)
}

impl Model {
    /// Non-parameter layer state (batch-norm running statistics), in a
    /// stable order for checkpointing: (name, running mean, running var).
    pub fn norm_states(&self) -> Vec<(String, Vec<f32>, Vec<f32>)> {
        let bns = match &self.kind {
            Kind::Resnet(m) => m.batch_norms(),
            Kind::Inception(m) => m.batch_norms(),
            Kind::Vit(_) | Kind::Unet(_) => Vec::new(),
        };
        bns.into_iter()
            .map(|(name, bn)| {
                let (mean, var) = bn.running_state();
                (name, mean, var)
            })
            .collect()
    }

    pub fn set_norm_states(&self, states: &[(String, Vec<f32>, Vec<f32>)]) -> Result<()> {
        let bns = match &self.kind {
            Kind::Resnet(m) => m.batch_norms(),
            Kind::Inception(m) => m.batch_norms(),
            Kind::Vit(_) | Kind::Unet(_) => Vec::new(),
        };
        if bns.len() != states.len() {
            return Err(Error::BadCheckpoint(format!(
                "norm state count {} vs {}",
                states.len(),
                bns.len()
            )));
        }
        for ((name, bn), (sname, mean, var)) in bns.into_iter().zip(states) {
            if &name != sname {
                return Err(Error::BadCheckpoint(format!("norm state {sname} vs layer {name}")));
            }
            bn.set_running_state(mean.clone(), var.clone());
        }
        Ok(())
    }
}

/// Eval-phase loss value (running statistics, no dropout): deterministic,
/// so it is the function the finite-difference verifications probe.
pub fn eval_loss(model: &Model, volume: &Volume, cfg: &LossConfig) -> Result<f32> {
    let mut g = GradGraph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward_volume(&mut g, volume, Phase::Eval, &mut rng, false)?;
    let loss = build_loss(model, &mut g, &out, volume, cfg)?;
    Ok(g.value(loss).data()[0])
}

/// As [`eval_loss`] but read at f64 shadow precision (for the
/// finite-difference probes).
pub fn eval_loss_f64(model: &Model, volume: &Volume, cfg: &LossConfig) -> Result<f64> {
    let mut g = GradGraph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward_volume(&mut g, volume, Phase::Eval, &mut rng, false)?;
    let loss = build_loss(model, &mut g, &out, volume, cfg)?;
    Ok(g.scalar_f64(loss))
}

/// Eval-phase loss together with per-parameter gradients.
pub fn eval_loss_with_grads(
    model: &Model,
    volume: &Volume,
    cfg: &LossConfig,
) -> Result<(f32, Vec<Option<Vec<f32>>>)> {
    let mut g = GradGraph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward_volume(&mut g, volume, Phase::Eval, &mut rng, false)?;
    let loss = build_loss(model, &mut g, &out, volume, cfg)?;
    let value = g.value(loss).data()[0];
    g.backward(loss)?;
    let grads = out.bound.iter().map(|&v| g.grad(v).map(|s| s.to_vec())).collect();
    Ok((value, grads))
}

/// Compare analytic parameter gradients against central finite differences
/// on `probes` sampled coordinates per parameter tensor. Returns the worst
/// relative error over accepted probes.
///
/// Two guards keep the comparison meaningful in f32:
/// - coordinates whose gradient is negligible against the model's largest
///   (structurally cancelled parameters, e.g. a bias feeding a norm) are
///   skipped; the difference quotient there measures rounding noise only,
/// - a coordinate is rejected when quotients at epsilon and epsilon/2
///   disagree, which flags a rectifier kink or pool-argmax flip inside the
///   probe window; derivatives are only defined away from those points.
pub fn param_finite_diff_error(
    model: &mut Model,
    volume: &Volume,
    cfg: &LossConfig,
    probes: usize,
    epsilon: f32,
) -> Result<f32> {
    let (loss_value, grads) = eval_loss_with_grads(model, volume, cfg)?;
    let global_max = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .fold(0.0f32, |m, &v| m.max(v.abs()));
    // the quotient carries ~a few ulps of the f32 loss across 2*epsilon; a
    // 1e-3 relative comparison is only meaningful where the gradient clears
    // that noise with margin
    let quotient_noise = 3.0 * f32::EPSILON * loss_value.abs() / (2.0 * epsilon);
    let floor = (5e-3 * global_max).max(quotient_noise / 1e-3).max(1e-7);

    let mut quotient = |model: &mut Model, p: usize, j: usize, eps: f32| -> Result<f32> {
        let orig = model.params.get(p).data()[j];
        model.params.get_mut(p).data_mut()[j] = orig + eps;
        let up = model.params.get(p).data()[j];
        let plus = eval_loss_f64(model, volume, cfg)?;
        model.params.get_mut(p).data_mut()[j] = orig - eps;
        let down = model.params.get(p).data()[j];
        let minus = eval_loss_f64(model, volume, cfg)?;
        model.params.get_mut(p).data_mut()[j] = orig;
        Ok(((plus - minus) / (up as f64 - down as f64)) as f32)
    };

    let mut worst = 0.0f32;
    for p in 0..model.params.len() {
        let Some(grad) = grads[p].clone() else { continue };
        // strongest coordinates first: they carry the trainable signal and
        // keep the quotient's noise floor irrelevant
        let mut order: Vec<usize> = (0..grad.len()).collect();
        order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
        let mut accepted = 0;
        for &j in order.iter().take(6 * probes) {
            if accepted == probes || grad[j].abs() < floor {
                break;
            }
            let c_full = quotient(model, p, j, epsilon)?;
            let c_half = quotient(model, p, j, epsilon / 2.0)?;
            let c_quarter = quotient(model, p, j, epsilon / 4.0)?;
            let scale = grad[j].abs().max(c_full.abs()).max(1e-6);
            let spread = (c_full - c_half)
                .abs()
                .max((c_full - c_quarter).abs())
                .max((c_half - c_quarter).abs());
            if spread > 1e-4 * scale {
                continue; // quotient not converged: kink or noise inside the window
            }
            accepted += 1;
            let denom = grad[j].abs().max(c_full.abs()).max(1e-8);
            let rel = (grad[j] - c_full).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

pub(crate) fn build_loss(
    model: &Model,
    g: &mut GradGraph,
    out: &ModelOutput,
    volume: &Volume,
    cfg: &LossConfig,
) -> Result<Value> {
    cfg.validate()?;
    let label = || -> Result<f32> {
        volume
            .label
            .map(|l| l as f32)
            .ok_or_else(|| Error::InvalidArgument("unlabeled volume in classification training".into()))
    };
    match model.spec.architecture {
        Architecture::Unet => {
            let recon = out.recon.expect("unet emits recon");
            mse_loss(g, recon, out.input)
        }
        Architecture::UnetMlp => {
            let recon = out.recon.expect("hybrid emits recon");
            let prob = out.probability.expect("hybrid emits probability");
            combined_loss(g, recon, out.input, prob, label()?, cfg)
        }
        _ => {
            let prob = out.probability.expect("classifier emits probability");
            bce_loss(g, prob, label()?, cfg.bce_clamp)
        }
    }
}
